//! Run results. Everything here is deterministic for a given scenario and
//! seed; wall-clock timing is kept out on purpose.

use serde::{Deserialize, Serialize};

use crate::migrator::{BatchRecord, Protocol};
use crate::mmu::TrapCounters;
use crate::model::{SimTime, Tier, VmId};
use crate::pool::PoolState;

pub const SCHEMA_VERSION: u32 = 1;

/// Guest time split by cause. `total()` is the VM's estimated time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    /// Uncontended memory latency of every access.
    pub access_ns: u64,
    /// Extra latency from competing with an in-flight migration.
    pub contention_ns: u64,
    /// Hardware A/D bit updates.
    pub ad_set_ns: u64,
    /// TLB flushes after bit clears and remaps.
    pub tlb_ns: u64,
    /// Exits on a full PML buffer.
    pub trap_ns: u64,
    /// Waiting on migration: stalls, protection traps, EPT faults, and
    /// quiesced pool moves.
    pub pause_ns: u64,
}

impl TimeBreakdown {
    pub fn total(&self) -> u64 {
        self.access_ns + self.contention_ns + self.ad_set_ns + self.tlb_ns + self.trap_ns + self.pause_ns
    }

    pub fn since(&self, earlier: &TimeBreakdown) -> TimeBreakdown {
        TimeBreakdown {
            access_ns: self.access_ns - earlier.access_ns,
            contention_ns: self.contention_ns - earlier.contention_ns,
            ad_set_ns: self.ad_set_ns - earlier.ad_set_ns,
            tlb_ns: self.tlb_ns - earlier.tlb_ns,
            trap_ns: self.trap_ns - earlier.trap_ns,
            pause_ns: self.pause_ns - earlier.pause_ns,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VmReport {
    pub vm: VmId,
    pub estimated_time_ns: u64,
    pub time: TimeBreakdown,
    /// Time accrued after the last epoch boundary.
    pub tail_time_ns: u64,
    /// Managed time over the pure-DRAM replay's time.
    pub slowdown_vs_dram: Option<f64>,
    pub dram_time_ns: Option<u64>,
    pub accesses: u64,
    /// Accesses served from each tier (DRAM, NVM). Under the memory-mode
    /// cache these are cache hits and misses.
    pub tier_accesses: [u64; 2],
    pub traps: TrapCounters,
    /// Data PTEs examined by the scanner over the run.
    pub pages_scanned_total: u64,
    pub gpt_pages_scanned_total: u64,
    /// Hypervisor scan work; not part of guest time.
    pub scan_ns: u64,
    pub bytes_migrated: u64,
    pub pages_migrated: u64,
    pub dirty_recopied: u64,
    pub pause_time_ns: u64,
    pub initial_quota: u64,
    pub final_quota: u64,
    pub final_dram_pages: u64,
    pub tracking_enabled: bool,
    /// Batches dropped for lack of frames.
    pub migration_shortfall: u64,
}

/// One VM at one epoch boundary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub end_ns: SimTime,
    pub vm: VmId,
    /// Guest time accrued during the epoch.
    pub time_ns: u64,
    pub dram_time_ns: Option<u64>,
    pub slowdown: Option<f64>,
    /// Bytes whose migration completed during the epoch.
    pub bytes_migrated: u64,
    /// Pages queued for migration at this boundary.
    pub pages_planned: u64,
    pub dram_quota: u64,
    pub dram_pages: u64,
    pub pool_free_dram: u64,
    /// Target DRAM size computed by the pool, if it ran.
    pub pool_target: Option<u64>,
    pub tracking: bool,
    /// The clock switch was evaluated at this boundary.
    pub clock_ticked: bool,
    pub clock_counter: u8,
}

/// Scan work of one VM in one window.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: u64,
    pub end_ns: SimTime,
    pub vm: VmId,
    pub tracking: bool,
    pub gpt_pages_scanned: u64,
    pub pages_examined: u64,
    /// GPT pages holding at least one PTE touched during the window.
    pub gpt_pages_touched: u64,
    pub observations: u64,
    pub scan_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    /// Concurrent batch from the migrator.
    Batch,
    /// Quiesced one-way move made by the pool.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub vm: VmId,
    pub kind: MoveKind,
    pub protocol: Option<Protocol>,
    pub start: SimTime,
    pub end: SimTime,
    pub src: Tier,
    pub dst: Tier,
    pub pages: u64,
    pub dirty_recopied: u64,
    pub copy_ns: u64,
    pub bytes: u64,
}

impl MigrationRecord {
    pub fn from_batch(vm: VmId, b: &BatchRecord) -> Self {
        MigrationRecord {
            vm,
            kind: MoveKind::Batch,
            protocol: Some(b.protocol),
            start: b.start,
            end: b.end,
            src: b.src,
            dst: b.dst,
            pages: b.pages,
            dirty_recopied: b.dirty_recopied,
            copy_ns: b.copy_ns,
            bytes: b.bytes,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub name: String,
    pub policy: String,
    pub protocol: Option<Protocol>,
    pub seed: u64,
    pub end_ns: SimTime,
    pub windows_run: u64,
    pub epochs_run: u64,
    pub vms: Vec<VmReport>,
    pub epochs: Vec<EpochRecord>,
    pub windows: Vec<WindowRecord>,
    pub migrations: Vec<MigrationRecord>,
    pub pool: PoolState,
}

impl RunReport {
    /// Geometric mean of per-VM slowdowns, if the DRAM replay ran.
    pub fn geomean_slowdown(&self) -> Option<f64> {
        let s: Option<Vec<f64>> = self.vms.iter().map(|v| v.slowdown_vs_dram).collect();
        s.map(|s| crate::stats::geometric_mean(&s))
    }

    pub fn epochs_of(&self, vm: VmId) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.vm == vm)
    }

    pub fn windows_of(&self, vm: VmId) -> impl Iterator<Item = &WindowRecord> {
        self.windows.iter().filter(move |w| w.vm == vm)
    }

    /// Checks that every VM's time components add up to its total, and so
    /// do its per-epoch times plus the tail.
    pub fn check_closure(&self) -> Result<(), String> {
        for v in &self.vms {
            if v.time.total() != v.estimated_time_ns {
                return Err(format!("vm {}: components sum to {} but total is {}", v.vm, v.time.total(), v.estimated_time_ns));
            }
            let epochs: u64 = self.epochs_of(v.vm).map(|e| e.time_ns).sum();
            if epochs + v.tail_time_ns != v.estimated_time_ns {
                return Err(format!(
                    "vm {}: epochs sum to {epochs} plus tail {} but total is {}",
                    v.vm, v.tail_time_ns, v.estimated_time_ns
                ));
            }
        }
        Ok(())
    }
}
