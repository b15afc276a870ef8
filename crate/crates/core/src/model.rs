//! Domain types shared by every module and the latency/bandwidth cost model
//! that turns simulated events into estimated nanoseconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nanoseconds since scenario start.
pub type SimTime = u64;

/// Guest-physical page index inside one VM.
pub type PageIndex = u64;

pub type VmId = u16;
pub type VcpuId = u16;

/// The two memory tiers. Every mapped page lives in exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Dram,
    Nvm,
}

impl Tier {
    pub const ALL: [Tier; 2] = [Tier::Dram, Tier::Nvm];

    pub fn index(self) -> usize {
        match self {
            Tier::Dram => 0,
            Tier::Nvm => 1,
        }
    }

    pub fn other(self) -> Tier {
        match self {
            Tier::Dram => Tier::Nvm,
            Tier::Nvm => Tier::Dram,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    pub fn is_write(self) -> bool {
        matches!(self, AccessKind::Write)
    }
}

/// Latency and bandwidth of one tier. Bandwidths are in bytes per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierCost {
    pub read_latency_ns: u64,
    pub write_latency_ns: u64,
    pub read_bw: f64,
    pub write_bw: f64,
}

const GB: f64 = 1e9;

/// Converts events into estimated time.
///
/// Tier figures default to measured Optane DC numbers (DRAM 81/82 ns and
/// 120/82 GB/s, PMem 310/94 ns and 37/13 GB/s). The trap, flush, and bit-set
/// charges are placeholders and are reported separately from access time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub dram: TierCost,
    pub nvm: TierCost,
    /// One guest/host context switch.
    pub vmtrap_cost_ns: u64,
    /// Charged per VCPU whose TLB is flushed.
    pub tlb_flush_cost_ns: u64,
    /// Charged once per access that had to set a guest A/D bit.
    pub ad_set_cost_ns: u64,
    /// Hypervisor-side cost of examining one PTE while scanning. Not part of
    /// guest time; reported as scan work.
    pub pte_scan_cost_ns: u64,
    /// Latency multiplier for accesses hitting a tier with a migration batch
    /// in flight.
    pub migration_contention_multiplier: f64,
    /// Copy threads beyond this count add nothing.
    pub threads_cap: u32,
    /// Aggregate copy bandwidth saturates at this multiple of the
    /// single-thread copy bandwidth.
    pub copy_speedup_ceiling: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            dram: TierCost {
                read_latency_ns: 81,
                write_latency_ns: 82,
                read_bw: 120.0 * GB,
                write_bw: 82.0 * GB,
            },
            nvm: TierCost {
                read_latency_ns: 310,
                write_latency_ns: 94,
                read_bw: 37.0 * GB,
                write_bw: 13.0 * GB,
            },
            vmtrap_cost_ns: 2000,
            tlb_flush_cost_ns: 500,
            ad_set_cost_ns: 200,
            pte_scan_cost_ns: 1,
            migration_contention_multiplier: 1.5,
            threads_cap: 4,
            copy_speedup_ceiling: 2.0,
        }
    }
}

impl CostModel {
    pub fn tier(&self, tier: Tier) -> &TierCost {
        match tier {
            Tier::Dram => &self.dram,
            Tier::Nvm => &self.nvm,
        }
    }

    /// Checks hard constraints and returns soft warnings for what-if
    /// configurations where NVM is not slower than DRAM.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, t) in [("dram", &self.dram), ("nvm", &self.nvm)] {
            if t.read_latency_ns == 0 || t.write_latency_ns == 0 {
                return Err(Error::Config(format!("{name}: latencies must be > 0")));
            }
            if !(t.read_bw > 0.0 && t.write_bw > 0.0) {
                return Err(Error::Config(format!("{name}: bandwidths must be > 0")));
            }
        }
        if self.threads_cap == 0 {
            return Err(Error::Config("threads_cap must be >= 1".into()));
        }
        if self.migration_contention_multiplier.is_nan() || self.migration_contention_multiplier < 1.0 {
            return Err(Error::Config(
                "migration_contention_multiplier must be >= 1".into(),
            ));
        }
        if self.copy_speedup_ceiling.is_nan() || self.copy_speedup_ceiling < 1.0 {
            return Err(Error::Config("copy_speedup_ceiling must be >= 1".into()));
        }

        let mut warnings = Vec::new();
        if self.nvm.read_latency_ns < self.dram.read_latency_ns {
            warnings.push("nvm read latency below dram read latency".to_string());
        }
        if self.nvm.read_bw > self.dram.read_bw || self.nvm.write_bw > self.dram.write_bw {
            warnings.push("nvm bandwidth exceeds dram bandwidth".to_string());
        }
        for w in &warnings {
            log::warn!("cost model: {w}");
        }
        Ok(warnings)
    }

    /// Configured latency of one access.
    pub fn access_latency(&self, kind: AccessKind, tier: Tier) -> u64 {
        let t = self.tier(tier);
        match kind {
            AccessKind::Read => t.read_latency_ns,
            AccessKind::Write => t.write_latency_ns,
        }
    }

    /// Latency of an access that competes with an in-flight migration.
    pub fn contended_latency(&self, kind: AccessKind, tier: Tier) -> u64 {
        (self.access_latency(kind, tier) as f64 * self.migration_contention_multiplier).round()
            as u64
    }

    /// Effective copy bandwidth from `src` to `dst` with `threads` workers.
    pub fn copy_bandwidth(&self, src: Tier, dst: Tier, threads: u32) -> Result<f64> {
        if threads == 0 {
            return Err(Error::Config("transfer needs at least one thread".into()));
        }
        let single = self.tier(src).read_bw.min(self.tier(dst).write_bw);
        if single.is_nan() || single <= 0.0 {
            return Err(Error::Config(format!(
                "zero copy bandwidth from {src:?} to {dst:?}"
            )));
        }
        let scale = (threads.min(self.threads_cap) as f64).min(self.copy_speedup_ceiling);
        Ok(single * scale)
    }

    /// Unrounded copy time in nanoseconds.
    pub fn transfer_time_exact(&self, bytes: u64, src: Tier, dst: Tier, threads: u32) -> Result<f64> {
        let bw = self.copy_bandwidth(src, dst, threads)?;
        Ok(bytes as f64 / bw * 1e9)
    }

    /// Time to copy `bytes` from `src` to `dst`, rounded to the nearest ns.
    pub fn transfer_time(&self, bytes: u64, src: Tier, dst: Tier, threads: u32) -> Result<u64> {
        Ok(self.transfer_time_exact(bytes, src, dst, threads)?.round() as u64)
    }
}

/// Page size and last-level page-table fan-out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageGeometry {
    pub page_size: u64,
    pub ptes_per_gpt_page: u64,
}

pub const PAGE_4K: u64 = 4096;
pub const PAGE_2M: u64 = 2 * 1024 * 1024;

impl Default for PageGeometry {
    fn default() -> Self {
        PageGeometry {
            page_size: PAGE_4K,
            ptes_per_gpt_page: 512,
        }
    }
}

impl PageGeometry {
    pub fn huge() -> Self {
        PageGeometry {
            page_size: PAGE_2M,
            ptes_per_gpt_page: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.page_size != PAGE_4K && self.page_size != PAGE_2M {
            return Err(Error::Config(format!(
                "page_size must be 4096 or 2097152, got {}",
                self.page_size
            )));
        }
        if self.page_size == PAGE_4K && self.ptes_per_gpt_page != 512 {
            return Err(Error::Config(
                "4 KiB geometry requires 512 PTEs per GPT page".into(),
            ));
        }
        if self.ptes_per_gpt_page == 0 {
            return Err(Error::Config("ptes_per_gpt_page must be > 0".into()));
        }
        Ok(())
    }

    /// Last-level GPT page holding the PTE of `page`.
    pub fn gpt_page(&self, page: PageIndex) -> u64 {
        page / self.ptes_per_gpt_page
    }

    /// Number of GPT pages needed to map `pages` data pages.
    pub fn gpt_pages_for(&self, pages: u64) -> u64 {
        pages.div_ceil(self.ptes_per_gpt_page)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_latencies() {
        let m = CostModel::default();
        assert_eq!(m.access_latency(AccessKind::Read, Tier::Dram), 81);
        assert_eq!(m.access_latency(AccessKind::Read, Tier::Nvm), 310);
        assert_eq!(m.access_latency(AccessKind::Write, Tier::Nvm), 94);
        assert_eq!(m.access_latency(AccessKind::Write, Tier::Dram), 82);
    }

    #[test]
    fn nvm_never_faster_by_default() {
        let m = CostModel::default();
        for kind in [AccessKind::Read, AccessKind::Write] {
            assert!(m.access_latency(kind, Tier::Nvm) >= m.access_latency(kind, Tier::Dram));
        }
        assert!(m.validate().unwrap().is_empty());
    }

    #[test]
    fn single_page_transfers() {
        let m = CostModel::default();
        // 4096 B / 13 GB/s = 315.08 ns; 4096 B / 37 GB/s = 110.70 ns.
        assert_eq!(m.transfer_time(4096, Tier::Dram, Tier::Nvm, 1).unwrap(), 315);
        assert_eq!(m.transfer_time(4096, Tier::Nvm, Tier::Dram, 1).unwrap(), 111);
    }

    #[test]
    fn zero_threads_rejected() {
        let m = CostModel::default();
        assert!(matches!(
            m.transfer_time(4096, Tier::Nvm, Tier::Dram, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_bandwidth_rejected() {
        let mut m = CostModel::default();
        m.nvm.write_bw = 0.0;
        assert!(m.validate().is_err());
        assert!(m.transfer_time(4096, Tier::Dram, Tier::Nvm, 1).is_err());
    }

    #[test]
    fn what_if_config_warns() {
        let mut m = CostModel::default();
        m.nvm.read_latency_ns = 50;
        assert_eq!(m.validate().unwrap().len(), 1);
    }

    #[test]
    fn thread_scaling_saturates() {
        let m = CostModel::default();
        let t1 = m.transfer_time_exact(1 << 20, Tier::Nvm, Tier::Dram, 1).unwrap();
        let t4 = m.transfer_time_exact(1 << 20, Tier::Nvm, Tier::Dram, 4).unwrap();
        let t16 = m.transfer_time_exact(1 << 20, Tier::Nvm, Tier::Dram, 16).unwrap();
        assert!((t1 / t4 - 2.0).abs() < 1e-12);
        assert_eq!(t4, t16);
    }

    #[test]
    fn geometry() {
        let g = PageGeometry::default();
        g.validate().unwrap();
        assert_eq!(g.gpt_page(511), 0);
        assert_eq!(g.gpt_page(512), 1);
        assert_eq!(g.gpt_pages_for(513), 2);
        assert!(PageGeometry { page_size: 8192, ptes_per_gpt_page: 512 }.validate().is_err());
        PageGeometry::huge().validate().unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tier() -> impl Strategy<Value = Tier> {
            prop_oneof![Just(Tier::Dram), Just(Tier::Nvm)]
        }

        proptest! {
            #[test]
            fn transfer_monotone(b1 in 1u64..1 << 30, b2 in 1u64..1 << 30,
                                 t1 in 1u32..16, t2 in 1u32..16,
                                 src in tier(), dst in tier()) {
                let m = CostModel::default();
                let (lo, hi) = (b1.min(b2), b1.max(b2));
                prop_assert!(m.transfer_time(lo, src, dst, t1).unwrap()
                    <= m.transfer_time(hi, src, dst, t1).unwrap());
                let (few, many) = (t1.min(t2), t1.max(t2));
                prop_assert!(m.transfer_time(hi, src, dst, many).unwrap()
                    <= m.transfer_time(hi, src, dst, few).unwrap());
                // Pure.
                prop_assert_eq!(m.transfer_time(hi, src, dst, t1).unwrap(),
                    m.transfer_time(hi, src, dst, t1).unwrap());
            }
        }
    }
}
