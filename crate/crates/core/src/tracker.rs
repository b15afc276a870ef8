//! PML-guided GPT scanner.
//!
//! Per window only the GPT pages logged by PML are scanned. Pages that were
//! seen get promoted in a multi-level queue and enter a do-not-disturb (DND)
//! period of `2^(level-1)` windows, during which their bits stay set and they
//! accrue one observation per window without being rescanned. A clock switch
//! turns tracking off once migrations dry up.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmu::{GptPageId, Mmu, TlbCharge};
use crate::model::{CostModel, PageIndex, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Monitoring window length.
    pub mws: SimTime,
    pub windows_per_epoch: u32,
    pub max_level: u8,
    /// `None` keeps tracking on for the whole run. The switch is evaluated
    /// at the first epoch boundary at or after each period mark.
    pub clock_period: Option<SimTime>,
    pub migration_threshold: u64,
    pub counter_limit: u8,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            mws: 600_000_000,
            windows_per_epoch: 8,
            max_level: 7,
            clock_period: Some(60_000_000_000),
            migration_threshold: 256 << 20,
            counter_limit: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mws == 0 {
            return Err(Error::Config("mws must be positive".into()));
        }
        if self.windows_per_epoch == 0 {
            return Err(Error::Config("windows_per_epoch must be at least 1".into()));
        }
        if self.max_level == 0 || self.max_level > 31 {
            return Err(Error::Config(format!("max_level {} outside 1..=31", self.max_level)));
        }
        if self.clock_period == Some(0) {
            return Err(Error::Config("clock_period must be positive".into()));
        }
        Ok(())
    }

    pub fn epoch_len(&self) -> SimTime {
        self.mws * self.windows_per_epoch as SimTime
    }

    pub fn dnd_windows(level: u8) -> u32 {
        if level == 0 {
            0
        } else {
            1 << (level - 1)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PageTrackState {
    pub level: u8,
    pub dnd_remaining: u32,
    pub epoch_reads: u32,
    pub epoch_writes: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageCounts {
    pub reads: u32,
    pub writes: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub page: PageIndex,
    pub read_seen: bool,
    pub write_seen: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WindowReport {
    pub gpt_pages_scanned: u64,
    pub data_pages_examined: u64,
    pub observations: Vec<Observation>,
    pub tlb: TlbCharge,
    /// Hypervisor time spent walking PTEs; not charged to the guest.
    pub scan_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelTransition {
    Promoted { from: u8, to: u8 },
    Demoted { from: u8, to: u8 },
    Stayed,
    DndTick { remaining: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueStep {
    pub level: u8,
    pub dnd_remaining: u32,
    pub clear_bits: bool,
    pub transition: LevelTransition,
}

/// One window of the queue rule for a single page.
pub fn queue_update(level: u8, dnd_remaining: u32, observed: bool, max_level: u8) -> QueueStep {
    if dnd_remaining > 0 {
        let left = dnd_remaining - 1;
        return QueueStep {
            level,
            dnd_remaining: left,
            clear_bits: left == 0,
            transition: LevelTransition::DndTick { remaining: left },
        };
    }
    if observed {
        let to = (level + 1).min(max_level);
        return QueueStep {
            level: to,
            dnd_remaining: TrackerConfig::dnd_windows(to),
            clear_bits: false,
            transition: LevelTransition::Promoted { from: level, to },
        };
    }
    let to = level.saturating_sub(1);
    QueueStep {
        level: to,
        dnd_remaining: 0,
        clear_bits: true,
        transition: if to == level { LevelTransition::Stayed } else { LevelTransition::Demoted { from: level, to } },
    }
}

/// Counter that disables tracking after enough quiet clock periods and
/// counts back down before re-enabling it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClockSwitch {
    pub counter: u8,
    pub limit: u8,
    pub threshold: u64,
    pub enabled: bool,
}

impl ClockSwitch {
    pub fn new(limit: u8, threshold: u64) -> Self {
        ClockSwitch { counter: 0, limit, threshold, enabled: true }
    }

    /// Advances one period and returns whether tracking is on afterwards.
    pub fn tick(&mut self, migrated_bytes: u64) -> bool {
        if self.enabled {
            if migrated_bytes < self.threshold {
                self.counter = (self.counter + 1).min(self.limit);
            } else {
                self.counter = 0;
            }
            if self.counter >= self.limit {
                self.enabled = false;
            }
        } else {
            self.counter = self.counter.saturating_sub(1);
            if self.counter == 0 {
                self.enabled = true;
            }
        }
        self.enabled
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClockOutcome {
    pub enabled: bool,
    pub changed: bool,
    pub tlb: TlbCharge,
}

#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    states: Vec<PageTrackState>,
    /// Pages at level >= 1.
    active: BTreeSet<PageIndex>,
    initialized: bool,
    clock: ClockSwitch,
    windows_in_epoch: u32,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, mapped_pages: u64) -> Self {
        let clock = ClockSwitch::new(cfg.counter_limit, cfg.migration_threshold);
        Tracker {
            cfg,
            states: vec![PageTrackState::default(); mapped_pages as usize],
            active: BTreeSet::new(),
            initialized: false,
            clock,
            windows_in_epoch: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn enabled(&self) -> bool {
        self.clock.enabled
    }

    pub fn clock(&self) -> &ClockSwitch {
        &self.clock
    }

    pub fn state(&self, page: PageIndex) -> PageTrackState {
        self.states[page as usize]
    }

    pub fn windows_in_epoch(&self) -> u32 {
        self.windows_in_epoch
    }

    /// Clears every A/D bit and GPT dirty bit and forgets all queue state.
    pub fn init_epoch(&mut self, mmu: &mut Mmu, cost: &CostModel) -> TlbCharge {
        mmu.take_logged_gpt_pages();
        let mut tlb = mmu.clear_guest_ad(0..mmu.mapped_pages(), cost);
        let gpt = mmu.clear_ept_gpt_dirty(0..mmu.gpt_pages(), cost);
        if tlb.cost_ns == 0 {
            tlb = gpt;
        }
        self.states.iter_mut().for_each(|s| *s = PageTrackState::default());
        self.active.clear();
        self.windows_in_epoch = 0;
        self.initialized = true;
        tlb
    }

    /// Zeroes the per-epoch counters; levels and DND periods carry over.
    pub fn start_epoch(&mut self) {
        for s in &mut self.states {
            s.epoch_reads = 0;
            s.epoch_writes = 0;
        }
        self.windows_in_epoch = 0;
    }

    pub fn end_window(&mut self, mmu: &mut Mmu, cost: &CostModel) -> Result<WindowReport> {
        if !self.initialized {
            return Err(Error::Fault("window closed before the tracker was initialized".into()));
        }
        let geometry = *mmu.geometry();
        let per_gpt = geometry.ptes_per_gpt_page;
        let mapped = mmu.mapped_pages();
        let logged: BTreeSet<GptPageId> = mmu.take_logged_gpt_pages();
        let mut report = WindowReport::default();
        let mut to_clear: Vec<PageIndex> = Vec::new();
        let mut handled: BTreeSet<PageIndex> = BTreeSet::new();
        let max_level = self.cfg.max_level;

        // Pages already in the queue: DND accrual, or demotion when their
        // GPT page was not logged.
        let active: Vec<PageIndex> = self.active.iter().copied().collect();
        for page in active {
            let st = self.states[page as usize];
            let in_logged = logged.contains(&geometry.gpt_page(page));
            if st.dnd_remaining == 0 && in_logged {
                continue;
            }
            let (read_seen, write_seen) = if st.dnd_remaining > 0 {
                let pte = mmu.guest_pte(page);
                (pte.accessed, pte.dirty)
            } else {
                debug_assert!(!mmu.guest_pte(page).accessed, "bits set on unlogged GPT page");
                (false, false)
            };
            self.apply(page, read_seen, write_seen, max_level, &mut to_clear, &mut report);
            handled.insert(page);
        }

        for &gpt in &logged {
            report.gpt_pages_scanned += 1;
            let lo = gpt * per_gpt;
            let hi = (lo + per_gpt).min(mapped);
            report.data_pages_examined += hi - lo;
            for page in lo..hi {
                if handled.contains(&page) {
                    continue;
                }
                let pte = mmu.guest_pte(page);
                if !pte.accessed && self.states[page as usize].level == 0 {
                    continue;
                }
                self.apply(page, pte.accessed, pte.dirty, max_level, &mut to_clear, &mut report);
            }
        }

        let mut tlb = mmu.clear_guest_ad(to_clear, cost);
        let gpt_flush = mmu.clear_ept_gpt_dirty(logged.iter().copied(), cost);
        if tlb.cost_ns == 0 {
            tlb = gpt_flush;
        }
        report.tlb = tlb;
        report.scan_ns = report.data_pages_examined * cost.pte_scan_cost_ns;
        self.windows_in_epoch += 1;
        Ok(report)
    }

    fn apply(
        &mut self,
        page: PageIndex,
        read_seen: bool,
        write_seen: bool,
        max_level: u8,
        to_clear: &mut Vec<PageIndex>,
        report: &mut WindowReport,
    ) {
        let st = &mut self.states[page as usize];
        if read_seen {
            st.epoch_reads += 1;
        }
        if write_seen {
            st.epoch_writes += 1;
        }
        if read_seen || write_seen {
            report.observations.push(Observation { page, read_seen, write_seen });
        }
        let step = queue_update(st.level, st.dnd_remaining, read_seen || write_seen, max_level);
        st.level = step.level;
        st.dnd_remaining = step.dnd_remaining;
        if step.clear_bits {
            to_clear.push(page);
        }
        if step.level == 0 {
            self.active.remove(&page);
        } else {
            self.active.insert(page);
        }
    }

    pub fn epoch_counts(&self) -> Vec<PageCounts> {
        self.states.iter().map(|s| PageCounts { reads: s.epoch_reads, writes: s.epoch_writes }).collect()
    }

    /// Runs one clock period. Switching tracking off disarms PML logging of
    /// GPT pages; switching it back on starts from a clean slate.
    pub fn clock_tick(&mut self, migrated_bytes: u64, mmu: &mut Mmu, cost: &CostModel) -> ClockOutcome {
        let was = self.clock.enabled;
        let now = self.clock.tick(migrated_bytes);
        let mut tlb = TlbCharge::default();
        if was && !now {
            mmu.disarm_gpt_logging();
            self.initialized = false;
        } else if !was && now {
            tlb = self.init_epoch(mmu, cost);
        }
        ClockOutcome { enabled: now, changed: was != now, tlb }
    }
}
