//! The deterministic event loop.
//!
//! Accesses from every VM are merged into one global stream ordered by
//! (time, vm, vcpu, sequence). Window boundaries fall at multiples of the
//! monitoring window and are processed before any access at or after them;
//! every `windows_per_epoch` windows the epoch logic runs: ranking, pool
//! rebalance, migration planning, and the clock switch, in that order.

use std::cmp::Reverse;
use std::collections::hash_map::DefaultHasher;
use std::collections::BinaryHeap;
use std::hash::{Hash, Hasher};

use crate::baselines::{fixed_threshold_plan, numa_b_place, EptScanner, MmCache, TwoListState};
use crate::classifier::{degrees, diff_placement, rank, Degree, Ranking};
use crate::error::{Error, Result};
use crate::migrator::{Interception, Migration, VmFrames};
use crate::mmu::Mmu;
use crate::model::{CostModel, SimTime, Tier, VmId};
use crate::pool::{apply_plan, compute_targets, move_pages_quiesced, rebalance, Limits, PoolMember, PoolState, TargetInput};
use crate::tracker::{Tracker, WindowReport};
use crate::workload::{AccessEvent, Trace};

use super::report::{EpochRecord, MigrationRecord, MoveKind, RunReport, TimeBreakdown, VmReport, WindowRecord, SCHEMA_VERSION};
use super::scenario::{mix_seed, Policy, Scenario};

#[derive(Clone, Debug)]
enum Monitor {
    None,
    Gpt(Tracker),
    Ept(EptScanner),
    TwoList { scan: EptScanner, lists: TwoListState, since_aging: u32 },
}

#[derive(Clone, Debug)]
struct VmState {
    id: VmId,
    mmu: Mmu,
    frames: VmFrames,
    monitor: Monitor,
    job: Option<Migration>,
    ranking: Option<Ranking>,
    degrees: Option<Vec<Degree>>,
    limits: Limits,
    reserve: u64,
    threads: u32,
    now: SimTime,
    time: TimeBreakdown,
    /// Running total kept apart from `time` so closure can be checked.
    total: u64,
    accesses: u64,
    tier_accesses: [u64; 2],
    pages_scanned: u64,
    gpt_pages_scanned: u64,
    scan_ns: u64,
    pool_bytes: u64,
    pool_pages: u64,
    pool_records: Vec<MigrationRecord>,
    bytes_at_tick: u64,
    bytes_at_epoch: u64,
    time_at_epoch: TimeBreakdown,
    touched: Vec<bool>,
    touched_count: u64,
    /// Flush from arming the tracker, charged when the guest first runs.
    startup_tlb_ns: u64,
}

impl VmState {
    fn charge(&mut self, c: &TimeBreakdown) {
        self.time.access_ns += c.access_ns;
        self.time.contention_ns += c.contention_ns;
        self.time.ad_set_ns += c.ad_set_ns;
        self.time.tlb_ns += c.tlb_ns;
        self.time.trap_ns += c.trap_ns;
        self.time.pause_ns += c.pause_ns;
        self.total += c.total();
    }

    fn charge_tlb(&mut self, ns: u64) {
        self.charge(&TimeBreakdown { tlb_ns: ns, ..TimeBreakdown::default() });
    }

    fn migrated_bytes(&self) -> u64 {
        self.pool_bytes + self.job.as_ref().map_or(0, |j| j.report().bytes)
    }

    fn busy(&self) -> bool {
        self.job.as_ref().is_some_and(|j| !j.is_idle())
    }

    fn tracking(&self) -> bool {
        match &self.monitor {
            Monitor::None => false,
            Monitor::Gpt(t) => t.enabled(),
            _ => true,
        }
    }

    fn check_frames(&self) -> std::result::Result<(), String> {
        self.frames
            .check(&self.mmu, self.job.as_ref().and_then(|j| j.in_flight()))
            .map_err(|e| format!("vm {}: {e}", self.id))
    }
}

impl PoolMember for VmState {
    fn frames(&self) -> &VmFrames {
        &self.frames
    }

    fn frames_mut(&mut self) -> &mut VmFrames {
        &mut self.frames
    }

    fn quiesced_move(&mut self, n: u64, src: Tier, dst: Tier, cost: &CostModel) -> Result<u64> {
        let Some(ranking) = self.ranking.as_ref() else {
            return Ok(0);
        };
        let m = move_pages_quiesced(&mut self.mmu, &mut self.frames, ranking, n, src, dst, self.threads, cost)?;
        if m.pages == 0 {
            return Ok(0);
        }
        self.charge(&TimeBreakdown { pause_ns: m.pause_ns, tlb_ns: m.tlb.cost_ns, ..TimeBreakdown::default() });
        let bytes = m.pages * self.mmu.geometry().page_size;
        self.pool_bytes += bytes;
        self.pool_pages += m.pages;
        self.pool_records.push(MigrationRecord {
            vm: self.id,
            kind: MoveKind::Pool,
            protocol: None,
            start: self.now,
            end: self.now + m.pause_ns,
            src,
            dst,
            pages: m.pages,
            dirty_recopied: 0,
            copy_ns: m.pause_ns,
            bytes,
        });
        Ok(m.pages)
    }

    fn nvm_reserve(&self) -> u64 {
        self.reserve
    }
}

/// Generates or loads every VM's trace, tagged with its VM id.
pub fn load_traces(sc: &Scenario) -> Result<Vec<Trace>> {
    sc.vms
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = v.trace.load(mix_seed(sc.seed, i as u64), &sc.base_dir)?.with_vm(i as VmId);
            t.validate(Some(v.mapped_pages)).map_err(|e| Error::Validation(format!("vm {i}: {e}")))?;
            if let Some(e) = t.events.iter().find(|e| e.vcpu >= v.vcpus) {
                return Err(Error::Validation(format!("vm {i}: trace uses vcpu {} but the VM has {}", e.vcpu, v.vcpus)));
            }
            Ok(t)
        })
        .collect()
}

/// The same workload with every page in DRAM and nothing managed.
pub fn dram_replay_scenario(sc: &Scenario) -> Scenario {
    let mut r = sc.clone();
    r.policy = Policy::NumaB;
    r.protocol = None;
    r.total_dram_frames = None;
    r.total_nvm_frames = None;
    for v in &mut r.vms {
        v.initial_dram_quota = v.mapped_pages;
    }
    r
}

/// Runs the scenario and its pure-DRAM replay, and fills in slowdowns.
pub fn run_scenario(sc: &Scenario) -> Result<RunReport> {
    sc.validate()?;
    let traces = load_traces(sc)?;
    let mut report = run_with_traces(sc, &traces)?;
    let dram = run_with_traces(&dram_replay_scenario(sc), &traces)?;
    attach_slowdown(&mut report, &dram);
    Ok(report)
}

/// Runs the scenario alone; slowdown fields stay empty.
pub fn run_managed(sc: &Scenario) -> Result<RunReport> {
    sc.validate()?;
    let traces = load_traces(sc)?;
    run_with_traces(sc, &traces)
}

fn ratio(managed: u64, dram: u64) -> f64 {
    if dram == 0 {
        if managed == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        managed as f64 / dram as f64
    }
}

/// Copies the replay's times into `report` and computes the ratios.
pub fn attach_slowdown(report: &mut RunReport, dram: &RunReport) {
    for (v, d) in report.vms.iter_mut().zip(&dram.vms) {
        v.dram_time_ns = Some(d.estimated_time_ns);
        v.slowdown_vs_dram = Some(ratio(v.estimated_time_ns, d.estimated_time_ns));
    }
    for (e, d) in report.epochs.iter_mut().zip(&dram.epochs) {
        debug_assert_eq!((e.epoch, e.vm), (d.epoch, d.vm));
        e.dram_time_ns = Some(d.time_ns);
        e.slowdown = Some(ratio(e.time_ns, d.time_ns));
    }
}

/// True once `at` reaches the next mark of a periodic action; `None`
/// means every epoch.
fn due(next: &mut SimTime, period: Option<SimTime>, at: SimTime) -> bool {
    let Some(p) = period else {
        return true;
    };
    if at < *next {
        return false;
    }
    while *next <= at {
        *next += p;
    }
    true
}

struct Engine<'a> {
    sc: &'a Scenario,
    cost: CostModel,
    vms: Vec<VmState>,
    pool: PoolState,
    cache: Option<MmCache>,
    host_base: Vec<u64>,
    max_degree: Degree,
    windows_run: u64,
    epochs_run: u64,
    next_clock: SimTime,
    next_rebalance: SimTime,
    windows: Vec<WindowRecord>,
    epochs: Vec<EpochRecord>,
    migrations: Vec<MigrationRecord>,
}

/// Runs `sc` over pre-built traces (one per VM, tagged with its id).
pub fn run_with_traces(sc: &Scenario, traces: &[Trace]) -> Result<RunReport> {
    sc.validate()?;
    if traces.len() != sc.vms.len() {
        return Err(Error::Validation(format!("{} traces for {} VMs", traces.len(), sc.vms.len())));
    }
    let mut engine = Engine::new(sc, traces)?;
    let end = engine.replay(traces)?;
    engine.finish(end)
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, traces: &[Trace]) -> Result<Self> {
        let cost = sc.cost.clone();
        let policy = sc.policy;
        let tracker_cfg = sc.tracker_config();
        let reserve = sc.nvm_reserve();
        let total_nvm = sc.total_nvm_frames.unwrap_or_else(|| sc.vms.iter().map(|v| v.mapped_pages + reserve).sum());
        let mut pool = PoolState::new(sc.total_dram(), total_nvm);
        let mut vms = Vec::with_capacity(sc.vms.len());
        let mut host_base = Vec::with_capacity(sc.vms.len());
        let mut base = 0;
        for (i, (spec, trace)) in sc.vms.iter().zip(traces).enumerate() {
            host_base.push(base);
            base += spec.mapped_pages;
            let tiers = if policy == Policy::MmCache {
                vec![Tier::Nvm; spec.mapped_pages as usize]
            } else {
                numa_b_place(&spec.allocation_order(trace), spec.mapped_pages, spec.initial_dram_quota)
            };
            let mut mmu = Mmu::new(sc.geometry, spec.vcpus, tiers);
            // Only the GPT scanner consumes PML records of GPT pages.
            if !policy.uses_gpt_tracker() {
                mmu.disarm_gpt_logging();
            }
            let used = [mmu.count_in(Tier::Dram), mmu.count_in(Tier::Nvm)];
            let dram_quota = if policy == Policy::MmCache { 0 } else { spec.initial_dram_quota };
            let frames = VmFrames { quota: [dram_quota, used[1] + reserve], used };
            for tier in Tier::ALL {
                pool.take(tier, frames.quota[tier.index()]).map_err(|_| {
                    Error::Validation(format!("host {tier:?} frames run out placing vm {i}"))
                })?;
            }
            let monitor = match policy {
                Policy::HmmvIsland | Policy::HmmvPool | Policy::FixedThreshold(_) => {
                    Monitor::Gpt(Tracker::new(tracker_cfg.clone(), spec.mapped_pages))
                }
                Policy::EptScan => Monitor::Ept(EptScanner::new(spec.mapped_pages)),
                Policy::TwoList => Monitor::TwoList {
                    scan: EptScanner::new(spec.mapped_pages),
                    lists: TwoListState::new(spec.mapped_pages),
                    since_aging: 0,
                },
                Policy::NumaB | Policy::MmCache => Monitor::None,
            };
            let mut st = VmState {
                id: i as VmId,
                frames,
                job: policy.migrates().then(|| Migration::new(sc.protocol(), sc.migrator.clone(), 0)),
                ranking: None,
                degrees: None,
                limits: sc.pool.limits(spec.initial_dram_quota),
                reserve,
                threads: sc.migrator.threads,
                now: 0,
                time: TimeBreakdown::default(),
                total: 0,
                accesses: 0,
                tier_accesses: [0; 2],
                pages_scanned: 0,
                gpt_pages_scanned: 0,
                scan_ns: 0,
                pool_bytes: 0,
                pool_pages: 0,
                pool_records: Vec::new(),
                bytes_at_tick: 0,
                bytes_at_epoch: 0,
                time_at_epoch: TimeBreakdown::default(),
                touched: vec![false; mmu.gpt_pages() as usize],
                touched_count: 0,
                startup_tlb_ns: 0,
                monitor,
                mmu,
            };
            if let Monitor::Gpt(t) = &mut st.monitor {
                st.startup_tlb_ns = t.init_epoch(&mut st.mmu, &cost).cost_ns;
            }
            vms.push(st);
        }
        let cache = if policy == Policy::MmCache {
            Some(MmCache::new(sc.total_dram() * sc.geometry.page_size, &sc.mm_cache)?)
        } else {
            None
        };
        Ok(Engine {
            sc,
            max_degree: sc.classifier.max_degree(sc.tracker.windows_per_epoch),
            cost,
            vms,
            pool,
            cache,
            host_base,
            windows_run: 0,
            epochs_run: 0,
            next_clock: sc.tracker.clock_period.unwrap_or(0),
            next_rebalance: sc.pool.rebalance_period.unwrap_or(0),
            windows: Vec::new(),
            epochs: Vec::new(),
            migrations: Vec::new(),
        })
    }

    fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for st in &self.vms {
            st.frames.quota.hash(&mut h);
            st.frames.used.hash(&mut h);
            st.mmu.count_in(Tier::Dram).hash(&mut h);
            st.mmu.count_in(Tier::Nvm).hash(&mut h);
            let c = st.mmu.counters();
            (c.pml_full, c.ept_fault, c.wp_fault, c.other_exits).hash(&mut h);
            st.total.hash(&mut h);
        }
        self.pool.total.hash(&mut h);
        self.pool.free.hash(&mut h);
        h.finish()
    }

    fn breach(&self, module: &'static str, time_ns: SimTime, detail: String) -> Error {
        Error::InvariantBreach { module, time_ns, detail, digest: self.digest() }
    }

    /// Stamps time and digest onto breaches raised by lower modules.
    fn locate(&self, e: Error, time_ns: SimTime) -> Error {
        match e {
            Error::InvariantBreach { module, detail, .. } => self.breach(module, time_ns, detail),
            Error::Fault(detail) => self.breach("harness", time_ns, detail),
            other => other,
        }
    }

    fn check_frames(&self, t: SimTime) -> Result<()> {
        for st in &self.vms {
            st.check_frames().map_err(|d| self.breach("migrator", t, d))?;
        }
        self.pool.check(self.vms.iter().map(|s| &s.frames)).map_err(|d| self.breach("pool", t, d))
    }

    fn replay(&mut self, traces: &[Trace]) -> Result<SimTime> {
        let mws = self.sc.tracker.mws;
        let mut cursor = vec![0usize; traces.len()];
        let mut heap = BinaryHeap::new();
        for (vm, t) in traces.iter().enumerate() {
            if let Some(e) = t.events.first() {
                heap.push(Reverse((e.time, vm)));
            }
        }
        let mut next_boundary = mws;
        let mut end = 0;
        while let Some(Reverse((t, vm))) = heap.pop() {
            while next_boundary <= t {
                self.boundary(next_boundary)?;
                next_boundary += mws;
            }
            let ev = traces[vm].events[cursor[vm]];
            cursor[vm] += 1;
            if let Some(n) = traces[vm].events.get(cursor[vm]) {
                heap.push(Reverse((n.time, vm)));
            }
            self.access(&ev).map_err(|e| self.locate(e, t))?;
            end = t;
        }
        Ok(end)
    }

    fn access(&mut self, ev: &AccessEvent) -> Result<()> {
        let cost = &self.cost;
        let vm = ev.vm as usize;
        let st = &mut self.vms[vm];
        let mut charge = TimeBreakdown { tlb_ns: std::mem::take(&mut st.startup_tlb_ns), ..TimeBreakdown::default() };
        let mut icpt = Interception::default();
        if let Some(job) = st.job.as_mut() {
            charge.tlb_ns += job.advance(ev.time, &mut st.mmu, &mut st.frames, cost)?.cost_ns;
            icpt = job.intercept(ev, &mut st.mmu, cost);
        }
        let out = st.mmu.simulate_access(ev, cost)?;
        let tier = out.tier.expect("mapped page has a tier");
        let served = match self.cache.as_mut() {
            Some(cache) => {
                let addr = (self.host_base[vm] + ev.page) * st.mmu.geometry().page_size;
                let c = cache.access(addr, ev.kind, cost);
                charge.access_ns = c.latency_ns;
                if c.hit { Tier::Dram } else { Tier::Nvm }
            }
            None => {
                charge.access_ns = out.latency_ns;
                tier
            }
        };
        if icpt.contended {
            charge.contention_ns = cost.contended_latency(ev.kind, tier).saturating_sub(cost.access_latency(ev.kind, tier));
        }
        charge.ad_set_ns = out.ad_set_ns;
        charge.trap_ns = out.pml_trap_ns;
        charge.pause_ns = icpt.pause_ns + out.ept_fault_ns;
        st.charge(&charge);
        st.accesses += 1;
        st.tier_accesses[served.index()] += 1;
        let gpt = st.mmu.geometry().gpt_page(ev.page) as usize;
        if !st.touched[gpt] {
            st.touched[gpt] = true;
            st.touched_count += 1;
        }
        if self.sc.check_invariants {
            self.check_frames(ev.time)?;
        }
        Ok(())
    }

    fn boundary(&mut self, at: SimTime) -> Result<()> {
        self.windows_run += 1;
        for vm in 0..self.vms.len() {
            self.window(vm, at).map_err(|e| self.locate(e, at))?;
        }
        if self.windows_run.is_multiple_of(self.sc.tracker.windows_per_epoch as u64) {
            self.epoch(at)?;
        }
        Ok(())
    }

    fn window(&mut self, vm: usize, at: SimTime) -> Result<()> {
        let cost = &self.cost;
        let aging = self.sc.two_list.aging_windows;
        let st = &mut self.vms[vm];
        let touched = std::mem::take(&mut st.touched_count);
        st.touched.iter_mut().for_each(|t| *t = false);
        let report: Option<WindowReport> = match &mut st.monitor {
            Monitor::None => None,
            Monitor::Gpt(t) if !t.enabled() => None,
            Monitor::Gpt(t) => Some(t.end_window(&mut st.mmu, cost)?),
            Monitor::Ept(s) => Some(s.end_window(&mut st.mmu, cost)?),
            Monitor::TwoList { scan, lists, since_aging } => {
                let r = scan.end_window(&mut st.mmu, cost)?;
                for o in &r.observations {
                    lists.update(o.page, true);
                }
                *since_aging += 1;
                if *since_aging == aging {
                    lists.age();
                    *since_aging = 0;
                }
                Some(r)
            }
        };
        let r = report.unwrap_or_default();
        st.charge_tlb(r.tlb.cost_ns);
        st.pages_scanned += r.data_pages_examined;
        st.gpt_pages_scanned += r.gpt_pages_scanned;
        st.scan_ns += r.scan_ns;
        let tracking = st.tracking();
        self.windows.push(WindowRecord {
            window: self.windows_run,
            end_ns: at,
            vm: vm as VmId,
            tracking,
            gpt_pages_scanned: r.gpt_pages_scanned,
            pages_examined: r.data_pages_examined,
            gpt_pages_touched: touched,
            observations: r.observations.len() as u64,
            scan_ns: r.scan_ns,
        });
        Ok(())
    }

    fn epoch(&mut self, at: SimTime) -> Result<()> {
        self.epochs_run += 1;
        let cost = self.cost.clone();
        let sc = self.sc;

        for i in 0..self.vms.len() {
            self.vms[i].now = at;
            let counts = match &self.vms[i].monitor {
                Monitor::Gpt(t) if t.enabled() => Some(t.epoch_counts()),
                Monitor::Ept(s) => Some(s.epoch_counts()),
                _ => None,
            };
            let (ranking, degs) = match (counts, &self.vms[i].monitor) {
                (Some(c), _) => {
                    let d = degrees(&c, &sc.classifier);
                    let r = rank(d.clone(), self.max_degree).map_err(|e| self.locate(e, at))?;
                    (Some(r), Some(d))
                }
                (None, Monitor::TwoList { lists, .. }) => {
                    let r = lists.ranking();
                    let d = r.degree.clone();
                    (Some(r), Some(d))
                }
                _ => (None, None),
            };
            self.vms[i].ranking = ranking;
            self.vms[i].degrees = degs;
        }

        let mut targets = vec![None; self.vms.len()];
        let pool_due = sc.policy == Policy::HmmvPool && due(&mut self.next_rebalance, sc.pool.rebalance_period, at);
        if pool_due {
            let inputs: Vec<TargetInput<'_>> = self
                .vms
                .iter()
                .map(|st| TargetInput {
                    degrees: if st.busy() { None } else { st.degrees.as_deref() },
                    quota: st.frames.quota[0],
                    limits: st.limits,
                })
                .collect();
            let t = compute_targets(&inputs, &sc.classifier);
            let quotas: Vec<u64> = self.vms.iter().map(|s| s.frames.quota[0]).collect();
            let plan = rebalance(&quotas, &t, self.pool.free[0], sc.pool.step_cap);
            log::debug!("epoch {} pool plan {:?}", self.epochs_run, plan);
            apply_plan(&mut self.vms, &mut self.pool, &plan, &cost).map_err(|e| self.locate(e, at))?;
            for (slot, v) in targets.iter_mut().zip(t) {
                *slot = Some(v);
            }
            self.check_frames(at)?;
        }

        let mut planned = vec![0u64; self.vms.len()];
        for (st, slot) in self.vms.iter_mut().zip(&mut planned) {
            let (Some(job), Some(ranking)) = (st.job.as_mut(), st.ranking.as_ref()) else {
                continue;
            };
            if !job.is_idle() {
                continue;
            }
            let plan = match sc.policy {
                Policy::FixedThreshold(t) => fixed_threshold_plan(ranking, st.mmu.tiers(), t),
                _ => diff_placement(ranking, st.mmu.tiers(), st.frames.quota[0]),
            };
            *slot = plan.pages() as u64;
            job.not_before(at);
            job.push_exchange(&plan);
        }

        let clock_period = sc.tracker_config().clock_period;
        let clock_due = clock_period.is_some() && due(&mut self.next_clock, clock_period, at);
        for st in &mut self.vms {
            let bytes = st.migrated_bytes();
            if clock_due {
                if let Monitor::Gpt(t) = &mut st.monitor {
                    let out = t.clock_tick(bytes - st.bytes_at_tick, &mut st.mmu, &cost);
                    if out.changed {
                        log::debug!("vm {} tracking {} at {at}", st.id, if out.enabled { "on" } else { "off" });
                    }
                    st.charge_tlb(out.tlb.cost_ns);
                }
                st.bytes_at_tick = bytes;
            }
            match &mut st.monitor {
                Monitor::Gpt(t) if t.enabled() => t.start_epoch(),
                Monitor::Ept(s) | Monitor::TwoList { scan: s, .. } => s.start_epoch(),
                _ => {}
            }
        }

        for (i, st) in self.vms.iter_mut().enumerate() {
            if let Some(job) = st.job.as_mut() {
                self.migrations.extend(job.take_records().iter().map(|b| MigrationRecord::from_batch(st.id, b)));
            }
            self.migrations.append(&mut st.pool_records);
            let bytes = st.migrated_bytes();
            let clock_counter = match &st.monitor {
                Monitor::Gpt(t) => t.clock().counter,
                _ => 0,
            };
            self.epochs.push(EpochRecord {
                epoch: self.epochs_run,
                end_ns: at,
                vm: st.id,
                time_ns: st.time.total() - st.time_at_epoch.total(),
                dram_time_ns: None,
                slowdown: None,
                bytes_migrated: bytes - st.bytes_at_epoch,
                pages_planned: planned[i],
                dram_quota: st.frames.quota[0],
                dram_pages: st.mmu.count_in(Tier::Dram),
                pool_free_dram: self.pool.free[0],
                pool_target: targets[i],
                tracking: st.tracking(),
                clock_ticked: clock_due && matches!(st.monitor, Monitor::Gpt(_)),
                clock_counter,
            });
            st.time_at_epoch = st.time;
            st.bytes_at_epoch = bytes;
        }
        Ok(())
    }

    fn finish(mut self, end: SimTime) -> Result<RunReport> {
        let cost = self.cost.clone();
        // Batches still queued complete after the workload; their flushes
        // land on an idle guest and are not charged.
        for st in &mut self.vms {
            if let Some(job) = st.job.as_mut() {
                job.finish(&mut st.mmu, &mut st.frames, &cost)?;
                self.migrations.extend(job.take_records().iter().map(|b| MigrationRecord::from_batch(st.id, b)));
            }
            self.migrations.append(&mut st.pool_records);
        }
        self.check_frames(end)?;
        let vms: Vec<VmReport> = self
            .vms
            .iter()
            .map(|st| {
                let job = st.job.as_ref().map(|j| *j.report()).unwrap_or_default();
                VmReport {
                    vm: st.id,
                    estimated_time_ns: st.total,
                    time: st.time,
                    tail_time_ns: st.time.total() - st.time_at_epoch.total(),
                    slowdown_vs_dram: None,
                    dram_time_ns: None,
                    accesses: st.accesses,
                    tier_accesses: st.tier_accesses,
                    traps: *st.mmu.counters(),
                    pages_scanned_total: st.pages_scanned,
                    gpt_pages_scanned_total: st.gpt_pages_scanned,
                    scan_ns: st.scan_ns,
                    bytes_migrated: st.migrated_bytes(),
                    pages_migrated: job.pages_moved + st.pool_pages,
                    dirty_recopied: job.dirty_recopied,
                    pause_time_ns: st.time.pause_ns,
                    initial_quota: self.sc.vms[st.id as usize].initial_dram_quota,
                    final_quota: st.frames.quota[0],
                    final_dram_pages: st.mmu.count_in(Tier::Dram),
                    tracking_enabled: st.tracking(),
                    migration_shortfall: job.shortfall,
                }
            })
            .collect();
        let report = RunReport {
            schema_version: SCHEMA_VERSION,
            name: self.sc.name.clone(),
            policy: self.sc.policy.name(),
            protocol: self.sc.policy.migrates().then(|| self.sc.protocol()),
            seed: self.sc.seed,
            end_ns: end,
            windows_run: self.windows_run,
            epochs_run: self.epochs_run,
            vms,
            epochs: self.epochs,
            windows: self.windows,
            migrations: self.migrations,
            pool: self.pool,
        };
        report.check_closure().map_err(|d| Error::InvariantBreach { module: "harness", time_ns: end, detail: d, digest: 0 })?;
        Ok(report)
    }
}
