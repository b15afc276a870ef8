//! Page migration under three protocols.
//!
//! A [`Migration`] is a queue of batches executed one at a time against the
//! running workload. The event loop calls [`Migration::advance`] before each
//! access to fire due phase transitions and [`Migration::intercept`] to learn
//! whether the access stalls, faults, or competes for bandwidth.
//!
//! * `Pml`: clear data-dirty bits, copy with several threads while the guest
//!   keeps running, recopy pages the log shows as written, then install the
//!   new mappings directly in the EPT.
//! * `Wp`: same schedule, but the in-flight pages are write-protected: the
//!   first write to each raises a trap, and new mappings are faulted in.
//! * `Linux`: unmap the whole batch, copy serially, remap page by page; an
//!   access to a page not yet remapped waits for it.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::classifier::MigrationPlan;
use crate::error::{Error, Result};
use crate::mmu::{ExitReason, Mmu, TlbCharge, TrapCounters};
use crate::model::{CostModel, PageIndex, SimTime, Tier};
use crate::workload::AccessEvent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Pml,
    Wp,
    Linux,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Pml, Protocol::Wp, Protocol::Linux];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigratorConfig {
    /// Pages in flight per batch.
    pub batch_cap: usize,
    /// Copy threads for the parallel protocols; `Linux` always uses one.
    pub threads: u32,
    /// Idle time between the end of one batch and the start of the next.
    pub batch_spacing: SimTime,
}

impl Default for MigratorConfig {
    fn default() -> Self {
        MigratorConfig { batch_cap: 512, threads: 4, batch_spacing: 0 }
    }
}

impl MigratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_cap == 0 {
            return Err(Error::Config("batch_cap must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("migration threads must be at least 1".into()));
        }
        Ok(())
    }

    fn threads_for(&self, protocol: Protocol) -> u32 {
        match protocol {
            Protocol::Linux => 1,
            _ => self.threads,
        }
    }
}

/// Frame budget of one VM per tier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmFrames {
    pub quota: [u64; 2],
    pub used: [u64; 2],
}

impl VmFrames {
    pub fn free(&self, tier: Tier) -> u64 {
        self.quota[tier.index()] - self.used[tier.index()]
    }

    pub fn alloc(&mut self, tier: Tier, n: u64) -> Result<()> {
        if self.free(tier) < n {
            return Err(Error::Fault(format!("{n} {tier:?} frames requested, {} free", self.free(tier))));
        }
        self.used[tier.index()] += n;
        Ok(())
    }

    pub fn release(&mut self, tier: Tier, n: u64) -> Result<()> {
        if self.used[tier.index()] < n {
            return Err(Error::Fault(format!("releasing {n} {tier:?} frames, {} in use", self.used[tier.index()])));
        }
        self.used[tier.index()] -= n;
        Ok(())
    }

    /// Checks `used` against the MMU's placement, allowing for frames
    /// held by an in-flight batch on both tiers.
    pub fn check(&self, mmu: &Mmu, in_flight: Option<InFlightFrames>) -> std::result::Result<(), String> {
        for tier in Tier::ALL {
            let mut expect = mmu.count_in(tier);
            if let Some(f) = in_flight {
                if f.dst == tier {
                    expect += f.pending;
                }
                if f.src == tier {
                    expect += f.remapped;
                }
            }
            if self.used[tier.index()] != expect {
                return Err(format!("{tier:?} frames in use {} but placement needs {expect}", self.used[tier.index()]));
            }
            if self.used[tier.index()] > self.quota[tier.index()] {
                return Err(format!("{tier:?} frames in use {} above quota {}", self.used[tier.index()], self.quota[tier.index()]));
            }
        }
        Ok(())
    }
}

/// Frames an in-flight batch holds beyond what the placement shows: a
/// destination frame for each page not yet remapped, and a source frame
/// for each page already remapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InFlightFrames {
    pub src: Tier,
    pub dst: Tier,
    pub pending: u64,
    pub remapped: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub pages_moved: u64,
    pub dirty_recopied: u64,
    pub traps: TrapCounters,
    /// Copy plus recopy time summed over batches.
    pub copy_time: u64,
    pub total_pause_time: u64,
    pub bytes: u64,
    pub tlb_ns: u64,
    /// Pages dropped for lack of destination frames.
    pub shortfall: u64,
    pub batches: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub start: SimTime,
    pub end: SimTime,
    pub protocol: Protocol,
    pub src: Tier,
    pub dst: Tier,
    pub pages: u64,
    pub dirty_recopied: u64,
    pub copy_ns: u64,
    pub bytes: u64,
}

/// What the migration does to one workload access.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Interception {
    /// Time the access waits on the migration, including protection traps.
    pub pause_ns: u64,
    /// A batch is in flight, so the access competes for memory bandwidth.
    pub contended: bool,
}

#[derive(Clone, Debug)]
struct PendingBatch {
    pages: Vec<PageIndex>,
    src: Tier,
    dst: Tier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Copy,
    Recopy,
}

#[derive(Clone, Debug)]
struct InFlight {
    pages: Vec<PageIndex>,
    index: HashMap<PageIndex, usize>,
    src: Tier,
    dst: Tier,
    start: SimTime,
    phase: Phase,
    copy_end: SimTime,
    finalize_at: SimTime,
    dirty: BTreeSet<PageIndex>,
    /// Serial protocol: remap time of each page and how many are remapped.
    remap_at: Vec<SimTime>,
    remapped: Vec<bool>,
    next_remap: usize,
}

#[derive(Clone, Debug)]
pub struct Migration {
    protocol: Protocol,
    cfg: MigratorConfig,
    queue: VecDeque<PendingBatch>,
    current: Option<InFlight>,
    next_start: SimTime,
    report: MigrationReport,
    records: Vec<BatchRecord>,
}

impl Migration {
    pub fn new(protocol: Protocol, cfg: MigratorConfig, start: SimTime) -> Self {
        Migration {
            protocol,
            cfg,
            queue: VecDeque::new(),
            current: None,
            next_start: start,
            report: MigrationReport::default(),
            records: Vec::new(),
        }
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    /// Queues a one-way move, split into batches of at most `batch_cap`.
    pub fn push_move(&mut self, pages: &[PageIndex], src: Tier, dst: Tier) {
        for chunk in pages.chunks(self.cfg.batch_cap) {
            self.queue.push_back(PendingBatch { pages: chunk.to_vec(), src, dst });
        }
    }

    /// Queues an exchange as alternating demote and promote batches, so a
    /// reserve of `batch_cap` free NVM frames suffices.
    pub fn push_exchange(&mut self, plan: &MigrationPlan) {
        let cap = self.cfg.batch_cap;
        for (down, up) in plan.demote.chunks(cap).zip(plan.promote.chunks(cap)) {
            self.queue.push_back(PendingBatch { pages: down.to_vec(), src: Tier::Dram, dst: Tier::Nvm });
            self.queue.push_back(PendingBatch { pages: up.to_vec(), src: Tier::Nvm, dst: Tier::Dram });
        }
    }

    /// Holds the next batch start back to at least `t`.
    pub fn not_before(&mut self, t: SimTime) {
        self.next_start = self.next_start.max(t);
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none() && self.queue.is_empty()
    }

    pub fn in_flight(&self) -> Option<InFlightFrames> {
        self.current.as_ref().map(|b| {
            let remapped = b.remapped.iter().filter(|&&r| r).count() as u64;
            InFlightFrames { src: b.src, dst: b.dst, pending: b.pages.len() as u64 - remapped, remapped }
        })
    }

    pub fn report(&self) -> &MigrationReport {
        &self.report
    }

    pub fn take_records(&mut self) -> Vec<BatchRecord> {
        std::mem::take(&mut self.records)
    }

    /// Time of the next phase transition, if any.
    pub fn next_event(&self) -> Option<SimTime> {
        match &self.current {
            Some(b) => Some(match b.phase {
                Phase::Copy if self.protocol == Protocol::Linux && b.next_remap < b.pages.len() => {
                    b.remap_at[b.next_remap]
                }
                Phase::Copy => b.copy_end,
                Phase::Recopy => b.finalize_at,
            }),
            None if !self.queue.is_empty() => Some(self.next_start),
            None => None,
        }
    }

    /// Fires every transition due at or before `t`. Returns TLB flushes to
    /// charge to the guest.
    pub fn advance(&mut self, t: SimTime, mmu: &mut Mmu, frames: &mut VmFrames, cost: &CostModel) -> Result<TlbCharge> {
        let mut tlb = TlbCharge::default();
        while let Some(at) = self.next_event() {
            if at > t {
                break;
            }
            match self.current.as_ref().map(|b| b.phase) {
                None => tlb.add(self.start_batch(at, mmu, frames, cost)?),
                Some(Phase::Copy) => {
                    if self.protocol == Protocol::Linux {
                        self.linux_step(at, mmu, frames, cost)?;
                    } else {
                        self.end_copy(mmu, cost)?;
                    }
                }
                Some(Phase::Recopy) => self.finalize(mmu, frames, cost)?,
            }
        }
        self.report.tlb_ns += tlb.cost_ns;
        Ok(tlb)
    }

    /// Runs the queue to completion without further workload.
    pub fn finish(&mut self, mmu: &mut Mmu, frames: &mut VmFrames, cost: &CostModel) -> Result<TlbCharge> {
        self.advance(SimTime::MAX, mmu, frames, cost)
    }

    fn start_batch(&mut self, at: SimTime, mmu: &mut Mmu, frames: &mut VmFrames, cost: &CostModel) -> Result<TlbCharge> {
        let PendingBatch { mut pages, src, dst } = self.queue.pop_front().expect("queue checked non-empty");
        pages.retain(|&p| mmu.tier(p) == src);
        let room = frames.free(dst) as usize;
        if room < pages.len() {
            log::warn!("migration to {dst:?} short of frames: {} of {} pages", room, pages.len());
            self.report.shortfall += (pages.len() - room) as u64;
            pages.truncate(room);
        }
        if pages.is_empty() {
            return Ok(TlbCharge::default());
        }
        frames.alloc(dst, pages.len() as u64)?;
        let n = pages.len();
        let threads = self.cfg.threads_for(self.protocol);
        let page_size = mmu.geometry().page_size;
        let copy = cost.transfer_time(n as u64 * page_size, src, dst, threads)?;
        let tlb = match self.protocol {
            Protocol::Pml => mmu.clear_data_dirty(pages.iter().copied(), cost),
            Protocol::Wp => mmu.flush_tlb(cost),
            Protocol::Linux => {
                for &p in &pages {
                    mmu.unmap_ept(p);
                }
                mmu.flush_tlb(cost)
            }
        };
        let remap_at = if self.protocol == Protocol::Linux {
            let per_page = cost.transfer_time_exact(page_size, src, dst, 1)?;
            (1..=n).map(|i| at + (i as f64 * per_page).round() as SimTime).collect()
        } else {
            Vec::new()
        };
        let index = pages.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        self.current = Some(InFlight {
            remapped: vec![false; n],
            pages,
            index,
            src,
            dst,
            start: at,
            phase: Phase::Copy,
            copy_end: at + copy,
            finalize_at: at + copy,
            dirty: BTreeSet::new(),
            remap_at,
            next_remap: 0,
        });
        Ok(tlb)
    }

    fn linux_step(&mut self, at: SimTime, mmu: &mut Mmu, frames: &mut VmFrames, cost: &CostModel) -> Result<()> {
        let b = self.current.as_mut().expect("batch in flight");
        while b.next_remap < b.pages.len() && b.remap_at[b.next_remap] <= at {
            let i = b.next_remap;
            if !b.remapped[i] {
                mmu.remap(b.pages[i], b.dst, false);
                b.remapped[i] = true;
            }
            b.next_remap += 1;
        }
        if b.next_remap == b.pages.len() {
            b.phase = Phase::Recopy;
            b.finalize_at = b.copy_end.max(at);
            self.finalize(mmu, frames, cost)?;
        }
        Ok(())
    }

    fn end_copy(&mut self, mmu: &mut Mmu, cost: &CostModel) -> Result<()> {
        let protocol = self.protocol;
        let threads = self.cfg.threads_for(protocol);
        let page_size = mmu.geometry().page_size;
        let b = self.current.as_mut().expect("batch in flight");
        if protocol == Protocol::Pml {
            let logged = mmu.take_dirty_log();
            b.dirty = logged.into_iter().filter(|p| b.index.contains_key(p)).collect();
        }
        let fill = protocol == Protocol::Pml;
        for (i, &p) in b.pages.iter().enumerate() {
            if !b.dirty.contains(&p) {
                mmu.remap(p, b.dst, fill);
                b.remapped[i] = true;
            }
        }
        let recopy = cost.transfer_time(b.dirty.len() as u64 * page_size, b.src, b.dst, threads)?;
        b.finalize_at = b.copy_end + recopy;
        b.phase = Phase::Recopy;
        Ok(())
    }

    fn finalize(&mut self, mmu: &mut Mmu, frames: &mut VmFrames, _cost: &CostModel) -> Result<()> {
        let b = self.current.take().expect("batch in flight");
        let fill = self.protocol == Protocol::Pml;
        for (i, &p) in b.pages.iter().enumerate() {
            if !b.remapped[i] {
                mmu.remap(p, b.dst, fill);
            }
        }
        let n = b.pages.len() as u64;
        frames.release(b.src, n)?;
        let page_size = mmu.geometry().page_size;
        let dirty = b.dirty.len() as u64;
        let bytes = (n + dirty) * page_size;
        let copy_ns = b.finalize_at - b.start;
        self.report.pages_moved += n;
        self.report.dirty_recopied += dirty;
        self.report.copy_time += copy_ns;
        self.report.bytes += bytes;
        self.report.batches += 1;
        self.records.push(BatchRecord {
            start: b.start,
            end: b.finalize_at,
            protocol: self.protocol,
            src: b.src,
            dst: b.dst,
            pages: n,
            dirty_recopied: dirty,
            copy_ns,
            bytes,
        });
        self.next_start = b.finalize_at + self.cfg.batch_spacing;
        Ok(())
    }

    /// Applies the migration's effect on one access at `ev.time`. Must follow
    /// `advance(ev.time)` and precede the MMU access.
    pub fn intercept(&mut self, ev: &AccessEvent, mmu: &mut Mmu, cost: &CostModel) -> Interception {
        let protocol = self.protocol;
        let Some(b) = self.current.as_mut() else {
            return Interception::default();
        };
        let mut out = Interception { pause_ns: 0, contended: true };
        let Some(&i) = b.index.get(&ev.page) else {
            return out;
        };
        match (protocol, b.phase) {
            (Protocol::Linux, _) => {
                // Every access before the page's remap waits for it; the
                // mapping is installed early only so the access can complete.
                out.pause_ns += b.remap_at[i].saturating_sub(ev.time);
                if !b.remapped[i] {
                    mmu.remap(ev.page, b.dst, false);
                    b.remapped[i] = true;
                }
            }
            (Protocol::Wp, Phase::Copy) => {
                if ev.kind.is_write() && b.dirty.insert(ev.page) {
                    out.pause_ns += mmu.vm_exit(ev.vcpu, ExitReason::WpFault, cost);
                    self.report.traps.wp_fault += 1;
                }
            }
            (Protocol::Pml, Phase::Copy) => {}
            (_, Phase::Recopy) => {
                if b.dirty.contains(&ev.page) {
                    out.pause_ns += b.finalize_at.saturating_sub(ev.time);
                }
            }
        }
        self.report.total_pause_time += out.pause_ns;
        out
    }
}

/// Replays `events` (one VM, time-ordered) against a migration of `pages`
/// starting at `start`, then lets it finish. The report's traps and pause
/// cover the whole replay, including faults on re-access after the batch.
#[allow(clippy::too_many_arguments)]
pub fn run_migration(
    protocol: Protocol,
    pages: &[PageIndex],
    src: Tier,
    dst: Tier,
    cfg: &MigratorConfig,
    mmu: &mut Mmu,
    frames: &mut VmFrames,
    cost: &CostModel,
    events: &[AccessEvent],
    start: SimTime,
) -> Result<MigrationReport> {
    let before = *mmu.counters();
    let mut job = Migration::new(protocol, cfg.clone(), start);
    job.push_move(pages, src, dst);
    let mut fault_pause = 0;
    for ev in events {
        job.advance(ev.time, mmu, frames, cost)?;
        job.intercept(ev, mmu, cost);
        let out = mmu.simulate_access(ev, cost)?;
        fault_pause += out.ept_fault_ns;
    }
    job.finish(mmu, frames, cost)?;
    let mut report = job.report;
    report.traps = mmu.counters().since(&before);
    report.total_pause_time += fault_pause;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AccessKind, PageGeometry};

    fn vm(pages: u64, vcpus: u16) -> (Mmu, VmFrames, CostModel) {
        let mmu = Mmu::new(PageGeometry::default(), vcpus, vec![Tier::Nvm; pages as usize]);
        let frames = VmFrames { quota: [pages, pages], used: [0, pages] };
        (mmu, frames, CostModel::default())
    }

    fn all(n: u64) -> Vec<PageIndex> {
        (0..n).collect()
    }

    #[test]
    fn empty_batch_is_zero() {
        let (mut m, mut f, c) = vm(16, 1);
        for p in Protocol::ALL {
            let r = run_migration(p, &[], Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &[], 0)
                .unwrap();
            assert_eq!(r, MigrationReport::default());
        }
    }

    #[test]
    fn access_free_trap_laws() {
        let n = 2000;
        for p in Protocol::ALL {
            let (mut m, mut f, c) = vm(n, 2);
            let r = run_migration(p, &all(n), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &[], 0)
                .unwrap();
            assert_eq!(r.pages_moved, n);
            assert_eq!(r.traps.total(), 0);
            assert_eq!(m.count_in(Tier::Dram), n);
            assert_eq!(f.used, [n, 0]);
            // Deferred faults: one per page on first re-access.
            let before = *m.counters();
            for page in 0..n {
                m.simulate_access(&AccessEvent::read(1 << 40, 0, page), &c).unwrap();
            }
            let faults = m.counters().since(&before).ept_fault;
            assert_eq!(faults, if p == Protocol::Pml { 0 } else { n }, "{p:?}");
        }
    }

    #[test]
    fn throughput_ratio() {
        let n = 4096;
        let mut times = HashMap::new();
        for p in [Protocol::Pml, Protocol::Linux] {
            let (mut m, mut f, c) = vm(n, 1);
            let r = run_migration(p, &all(n), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &[], 0)
                .unwrap();
            times.insert(p, r.copy_time as f64);
        }
        let ratio = times[&Protocol::Linux] / times[&Protocol::Pml];
        assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn single_page_linux_pause_is_copy_time() {
        let (mut m, mut f, c) = vm(4, 1);
        let copy = c.transfer_time(4096, Tier::Nvm, Tier::Dram, 1).unwrap();
        let r = run_migration(
            Protocol::Linux,
            &[2],
            Tier::Nvm,
            Tier::Dram,
            &MigratorConfig::default(),
            &mut m,
            &mut f,
            &c,
            &[AccessEvent::read(100, 0, 2)],
            100,
        )
        .unwrap();
        assert_eq!(r.total_pause_time, copy + c.vmtrap_cost_ns);
        assert_eq!(r.traps.ept_fault, 1);
    }

    #[test]
    fn pml_recopies_written_pages() {
        let (mut m, mut f, c) = vm(8, 1);
        let evs = [AccessEvent::write(1, 0, 3), AccessEvent::read(2, 0, 4)];
        let r = run_migration(Protocol::Pml, &all(8), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &evs, 0)
            .unwrap();
        assert_eq!(r.dirty_recopied, 1);
        assert_eq!(r.bytes, 9 * 4096);
        assert_eq!(r.traps.total(), 0);
    }

    #[test]
    fn wp_faults_once_per_written_page() {
        let (mut m, mut f, c) = vm(8, 1);
        let evs = [AccessEvent::write(1, 0, 3), AccessEvent::write(2, 0, 3), AccessEvent::read(3, 0, 4)];
        let r = run_migration(Protocol::Wp, &all(8), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &evs, 0)
            .unwrap();
        assert_eq!(r.traps.wp_fault, 1);
        assert_eq!(r.dirty_recopied, 1);
    }

    #[test]
    fn recopy_stall() {
        let (mut m, mut f, c) = vm(8, 1);
        let copy = c.transfer_time(8 * 4096, Tier::Nvm, Tier::Dram, 4).unwrap();
        let recopy = c.transfer_time(4096, Tier::Nvm, Tier::Dram, 4).unwrap();
        let evs = [AccessEvent::write(1, 0, 3), AccessEvent::read(copy + 1, 0, 3)];
        let r = run_migration(Protocol::Pml, &all(8), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &evs, 0)
            .unwrap();
        assert_eq!(r.total_pause_time, recopy - 1);
    }

    #[test]
    fn shortfall_truncates() {
        let (mut m, _, c) = vm(8, 1);
        let mut f = VmFrames { quota: [3, 8], used: [0, 8] };
        let r = run_migration(Protocol::Pml, &all(8), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &[], 0)
            .unwrap();
        assert_eq!(r.pages_moved, 3);
        assert_eq!(r.shortfall, 5);
        f.check(&m, None).unwrap();
    }

    #[test]
    fn exchange_fits_small_reserve() {
        let c = CostModel::default();
        let tiers: Vec<Tier> = (0..8).map(|i| if i < 4 { Tier::Dram } else { Tier::Nvm }).collect();
        let m = Mmu::new(PageGeometry::default(), 1, tiers);
        let f = VmFrames { quota: [4, 4 + 2], used: [4, 4] };
        let cfg = MigratorConfig { batch_cap: 2, ..MigratorConfig::default() };
        for protocol in Protocol::ALL {
            let mut m = m.clone();
            let mut f = f;
            let mut job = Migration::new(protocol, cfg.clone(), 0);
            job.push_exchange(&MigrationPlan { promote: vec![4, 5, 6, 7], demote: vec![0, 1, 2, 3] });
            while let Some(t) = job.next_event() {
                job.advance(t, &mut m, &mut f, &c).unwrap();
                f.check(&m, job.in_flight()).unwrap();
                // A write to a page mid-copy leaves it for the recopy pass.
                let ev = AccessEvent { time: t, vm: 0, vcpu: 0, kind: AccessKind::Write, page: 0 };
                job.intercept(&ev, &mut m, &c);
                f.check(&m, job.in_flight()).unwrap();
            }
            assert_eq!(job.report().shortfall, 0, "{protocol:?}");
            assert_eq!(job.report().batches, 4, "{protocol:?}");
            assert!((4..8).all(|p| m.tier(p) == Tier::Dram), "{protocol:?}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Dense mixed traffic over `pages` pages from 2 VCPUs.
        fn traffic(pages: u64) -> impl Strategy<Value = Vec<AccessEvent>> {
            proptest::collection::vec((0..pages, any::<bool>(), 1u64..40), 1..600).prop_map(|raw| {
                let mut t = 0;
                raw.into_iter()
                    .enumerate()
                    .map(|(i, (page, w, gap))| {
                        t += gap;
                        let mut e = if w { AccessEvent::write(t, 0, page) } else { AccessEvent::read(t, 0, page) };
                        e.vcpu = (i % 2) as u16;
                        e.time = t;
                        e
                    })
                    .collect::<Vec<_>>()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn dirty_set_is_write_set_during_copy(evs in traffic(64)) {
                for p in [Protocol::Pml, Protocol::Wp] {
                    let (mut m, mut f, c) = vm(64, 2);
                    let cfg = MigratorConfig::default();
                    let copy = c.transfer_time(64 * 4096, Tier::Nvm, Tier::Dram, 4).unwrap();
                    let r = run_migration(p, &all(64), Tier::Nvm, Tier::Dram, &cfg, &mut m, &mut f, &c, &evs, 0).unwrap();
                    let written: BTreeSet<u64> = evs.iter().filter(|e| e.kind.is_write() && e.time < copy).map(|e| e.page).collect();
                    prop_assert_eq!(r.dirty_recopied, written.len() as u64);
                    prop_assert!(r.dirty_recopied <= r.pages_moved);
                    f.check(&m, None).unwrap();
                }
            }

            #[test]
            fn pml_never_pauses_more_than_wp(evs in traffic(128)) {
                let mut pause = Vec::new();
                for p in [Protocol::Pml, Protocol::Wp] {
                    let (mut m, mut f, c) = vm(128, 2);
                    let r = run_migration(p, &all(128), Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &evs, 0).unwrap();
                    pause.push(r.total_pause_time);
                }
                prop_assert!(pause[0] <= pause[1]);
            }

            #[test]
            fn frames_conserved(evs in traffic(96), n in 0u64..96) {
                for p in Protocol::ALL {
                    let (mut m, mut f, c) = vm(96, 2);
                    let before = f.free(Tier::Dram) + f.free(Tier::Nvm);
                    let pages = all(n);
                    let r = run_migration(p, &pages, Tier::Nvm, Tier::Dram, &MigratorConfig::default(), &mut m, &mut f, &c, &evs, 0).unwrap();
                    prop_assert_eq!(r.pages_moved, n);
                    prop_assert_eq!(f.free(Tier::Dram), 96 - n);
                    prop_assert_eq!(f.free(Tier::Nvm), n);
                    prop_assert_eq!(f.free(Tier::Dram) + f.free(Tier::Nvm), before);
                    f.check(&m, None).unwrap();
                }
            }
        }
    }
}
