//! Two-dimensional paging substrate of one VM.
//!
//! Tracks guest PTE accessed/dirty bits, the EPT dirty bit of every
//! last-level guest page-table (GPT) page, per-page EPT state used by the
//! migrator, and one page-modification log (PML) buffer per VCPU.
//!
//! Setting a guest A/D bit is a write to the GPT page holding the PTE. When
//! that GPT page's EPT dirty bit is clear the write sets it and the GPT page
//! is appended to the VCPU's PML buffer. A write to a data page whose EPT
//! dirty bit is clear is logged the same way. Both EPT dirty bits start set,
//! so nothing is logged until a consumer clears them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostModel, PageGeometry, PageIndex, Tier, VcpuId};
use crate::workload::AccessEvent;

pub const PML_CAPACITY: usize = 512;

const ACCESSED: u8 = 1;
const DIRTY: u8 = 2;
const DATA_DIRTY: u8 = 4;
const EPT_PRESENT: u8 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GuestPte {
    pub accessed: bool,
    pub dirty: bool,
}

/// Index of a last-level GPT page.
pub type GptPageId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PmlEntry {
    GptPage(GptPageId),
    DataPage(PageIndex),
}

#[derive(Clone, Debug)]
pub struct PmlBuffer {
    pub vcpu: VcpuId,
    entries: Vec<PmlEntry>,
}

impl PmlBuffer {
    fn new(vcpu: VcpuId) -> Self {
        PmlBuffer { vcpu, entries: Vec::with_capacity(PML_CAPACITY) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapCounters {
    pub pml_full: u64,
    pub ept_fault: u64,
    pub wp_fault: u64,
    pub other_exits: u64,
}

impl TrapCounters {
    pub fn total(&self) -> u64 {
        self.pml_full + self.ept_fault + self.wp_fault + self.other_exits
    }

    /// Counts accrued since `earlier`.
    pub fn since(&self, earlier: &TrapCounters) -> TrapCounters {
        TrapCounters {
            pml_full: self.pml_full - earlier.pml_full,
            ept_fault: self.ept_fault - earlier.ept_fault,
            wp_fault: self.wp_fault - earlier.wp_fault,
            other_exits: self.other_exits - earlier.other_exits,
        }
    }

    pub fn add(&mut self, other: &TrapCounters) {
        self.pml_full += other.pml_full;
        self.ept_fault += other.ept_fault;
        self.wp_fault += other.wp_fault;
        self.other_exits += other.other_exits;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitReason {
    PmlFull,
    EptFault,
    WpFault,
    Other,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccessOutcome {
    pub tier: Option<Tier>,
    pub latency_ns: u64,
    /// A/D bits newly set by this access (bit 0 accessed, bit 1 dirty).
    pub bits_set: u8,
    pub ad_set_ns: u64,
    /// PML-full exits raised while logging.
    pub pml_full_traps: u32,
    pub pml_trap_ns: u64,
    /// Nonzero when the access faulted on a missing EPT mapping.
    pub ept_fault_ns: u64,
    pub gpt_logged: Option<GptPageId>,
    pub data_logged: bool,
}

impl AccessOutcome {
    pub fn traps_raised(&self) -> u32 {
        self.pml_full_traps + u32::from(self.ept_fault_ns > 0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TlbCharge {
    pub vcpus_flushed: u32,
    pub cost_ns: u64,
}

impl TlbCharge {
    pub fn add(&mut self, other: TlbCharge) {
        self.vcpus_flushed += other.vcpus_flushed;
        self.cost_ns += other.cost_ns;
    }
}

#[derive(Clone, Debug)]
pub struct Mmu {
    geometry: PageGeometry,
    flags: Vec<u8>,
    tier: Vec<Tier>,
    resident: [u64; 2],
    gpt_dirty: Vec<bool>,
    pml: Vec<PmlBuffer>,
    /// GPT pages drained from PML buffers but not yet consumed by a scan.
    staged_gpt: BTreeSet<GptPageId>,
    /// Data pages drained from PML buffers but not yet consumed by a migration.
    dirty_log: BTreeSet<PageIndex>,
    counters: TrapCounters,
}

impl Mmu {
    /// A VM with `tiers.len()` mapped pages placed as given.
    pub fn new(geometry: PageGeometry, vcpus: VcpuId, tiers: Vec<Tier>) -> Self {
        assert!(vcpus >= 1, "a VM needs at least one VCPU");
        let mapped = tiers.len() as u64;
        let mut resident = [0u64; 2];
        for t in &tiers {
            resident[t.index()] += 1;
        }
        Mmu {
            resident,
            geometry,
            flags: vec![DATA_DIRTY | EPT_PRESENT; tiers.len()],
            tier: tiers,
            gpt_dirty: vec![true; geometry.gpt_pages_for(mapped) as usize],
            pml: (0..vcpus).map(PmlBuffer::new).collect(),
            staged_gpt: BTreeSet::new(),
            dirty_log: BTreeSet::new(),
            counters: TrapCounters::default(),
        }
    }

    pub fn geometry(&self) -> &PageGeometry {
        &self.geometry
    }

    pub fn mapped_pages(&self) -> u64 {
        self.tier.len() as u64
    }

    pub fn gpt_pages(&self) -> u64 {
        self.gpt_dirty.len() as u64
    }

    pub fn vcpus(&self) -> VcpuId {
        self.pml.len() as VcpuId
    }

    pub fn counters(&self) -> &TrapCounters {
        &self.counters
    }

    pub fn tier(&self, page: PageIndex) -> Tier {
        self.tier[page as usize]
    }

    pub fn tiers(&self) -> &[Tier] {
        &self.tier
    }

    pub fn guest_pte(&self, page: PageIndex) -> GuestPte {
        let f = self.flags[page as usize];
        GuestPte { accessed: f & ACCESSED != 0, dirty: f & DIRTY != 0 }
    }

    pub fn gpt_ept_dirty(&self, gpt: GptPageId) -> bool {
        self.gpt_dirty[gpt as usize]
    }

    pub fn data_dirty(&self, page: PageIndex) -> bool {
        self.flags[page as usize] & DATA_DIRTY != 0
    }

    pub fn ept_present(&self, page: PageIndex) -> bool {
        self.flags[page as usize] & EPT_PRESENT != 0
    }

    pub fn pml_len(&self, vcpu: VcpuId) -> usize {
        self.pml[vcpu as usize].len()
    }

    pub fn staged_gpt_pages(&self) -> &BTreeSet<GptPageId> {
        &self.staged_gpt
    }

    /// Runs one guest access through the substrate.
    pub fn simulate_access(&mut self, ev: &AccessEvent, cost: &CostModel) -> Result<AccessOutcome> {
        let page = ev.page;
        if page >= self.mapped_pages() {
            return Err(Error::Fault(format!(
                "vm {} touched unmapped page {page} (mapping holds {})",
                ev.vm,
                self.mapped_pages()
            )));
        }
        if ev.vcpu as usize >= self.pml.len() {
            return Err(Error::Fault(format!("vm {} has no vcpu {}", ev.vm, ev.vcpu)));
        }
        let idx = page as usize;
        let mut out = AccessOutcome::default();

        if self.flags[idx] & EPT_PRESENT == 0 {
            self.flags[idx] |= EPT_PRESENT;
            out.ept_fault_ns = self.vm_exit(ev.vcpu, ExitReason::EptFault, cost);
        }

        let tier = self.tier[idx];
        out.tier = Some(tier);
        out.latency_ns = cost.access_latency(ev.kind, tier);

        let want = if ev.kind.is_write() { ACCESSED | DIRTY } else { ACCESSED };
        let missing = want & !self.flags[idx];
        if missing != 0 {
            self.flags[idx] |= missing;
            out.bits_set = missing;
            out.ad_set_ns = cost.ad_set_cost_ns;
            let gpt = self.geometry.gpt_page(page);
            if !self.gpt_dirty[gpt as usize] {
                self.gpt_dirty[gpt as usize] = true;
                out.gpt_logged = Some(gpt);
                self.log(ev.vcpu, PmlEntry::GptPage(gpt), cost, &mut out);
            }
        }

        if ev.kind.is_write() && self.flags[idx] & DATA_DIRTY == 0 {
            self.flags[idx] |= DATA_DIRTY;
            out.data_logged = true;
            self.log(ev.vcpu, PmlEntry::DataPage(page), cost, &mut out);
        }
        Ok(out)
    }

    fn log(&mut self, vcpu: VcpuId, entry: PmlEntry, cost: &CostModel, out: &mut AccessOutcome) {
        if self.pml[vcpu as usize].len() >= PML_CAPACITY {
            out.pml_full_traps += 1;
            out.pml_trap_ns += self.vm_exit(vcpu, ExitReason::PmlFull, cost);
        }
        self.pml[vcpu as usize].entries.push(entry);
    }

    /// Counts a VM exit on `vcpu`, drains its PML buffer (the hypervisor
    /// flushes the log on every exit), and returns the trap cost.
    pub fn vm_exit(&mut self, vcpu: VcpuId, reason: ExitReason, cost: &CostModel) -> u64 {
        match reason {
            ExitReason::PmlFull => self.counters.pml_full += 1,
            ExitReason::EptFault => self.counters.ept_fault += 1,
            ExitReason::WpFault => self.counters.wp_fault += 1,
            ExitReason::Other => self.counters.other_exits += 1,
        }
        self.stage(vcpu);
        cost.vmtrap_cost_ns
    }

    fn stage(&mut self, vcpu: VcpuId) {
        let entries = std::mem::take(&mut self.pml[vcpu as usize].entries);
        for e in entries {
            match e {
                PmlEntry::GptPage(g) => {
                    let fresh = self.staged_gpt.insert(g);
                    debug_assert!(fresh, "GPT page {g} logged twice without re-arm");
                }
                PmlEntry::DataPage(p) => {
                    self.dirty_log.insert(p);
                }
            }
        }
    }

    /// Empties one VCPU's buffer and returns the GPT pages it held. Logged
    /// data pages go to the migration dirty log.
    pub fn drain_pml(&mut self, vcpu: VcpuId) -> BTreeSet<GptPageId> {
        let entries = std::mem::take(&mut self.pml[vcpu as usize].entries);
        let mut out = BTreeSet::new();
        for e in entries {
            match e {
                PmlEntry::GptPage(g) => {
                    let fresh = out.insert(g);
                    assert!(fresh, "duplicate GPT page {g} in one PML buffer");
                }
                PmlEntry::DataPage(p) => {
                    self.dirty_log.insert(p);
                }
            }
        }
        out
    }

    /// Drains every VCPU buffer and returns all GPT pages logged since the
    /// last call, including those staged by intervening VM exits.
    pub fn take_logged_gpt_pages(&mut self) -> BTreeSet<GptPageId> {
        for v in 0..self.pml.len() {
            self.stage(v as VcpuId);
        }
        std::mem::take(&mut self.staged_gpt)
    }

    /// Drains every VCPU buffer and returns the data pages logged as dirty.
    pub fn take_dirty_log(&mut self) -> BTreeSet<PageIndex> {
        for v in 0..self.pml.len() {
            self.stage(v as VcpuId);
        }
        std::mem::take(&mut self.dirty_log)
    }

    fn flush_charge(&self, any: bool, cost: &CostModel) -> TlbCharge {
        if !any {
            return TlbCharge::default();
        }
        let n = self.pml.len() as u32;
        TlbCharge { vcpus_flushed: n, cost_ns: n as u64 * cost.tlb_flush_cost_ns }
    }

    /// Flushes every VCPU's TLB, as after a permission change.
    pub fn flush_tlb(&self, cost: &CostModel) -> TlbCharge {
        self.flush_charge(true, cost)
    }

    /// Clears guest A/D bits of `pages` and flushes every VCPU's TLB.
    pub fn clear_guest_ad<I: IntoIterator<Item = PageIndex>>(&mut self, pages: I, cost: &CostModel) -> TlbCharge {
        let mut any = false;
        for p in pages {
            self.flags[p as usize] &= !(ACCESSED | DIRTY);
            any = true;
        }
        self.flush_charge(any, cost)
    }

    /// Clears EPT dirty bits of GPT pages, re-arming PML logging for them.
    pub fn clear_ept_gpt_dirty<I: IntoIterator<Item = GptPageId>>(&mut self, gpts: I, cost: &CostModel) -> TlbCharge {
        let mut any = false;
        for g in gpts {
            self.gpt_dirty[g as usize] = false;
            any = true;
        }
        self.flush_charge(any, cost)
    }

    /// Sets every GPT page's EPT dirty bit so no GPT page is logged, and
    /// drops anything staged. Used when page tracking is switched off.
    pub fn disarm_gpt_logging(&mut self) {
        for v in 0..self.pml.len() {
            self.stage(v as VcpuId);
        }
        self.staged_gpt.clear();
        self.gpt_dirty.iter_mut().for_each(|d| *d = true);
    }

    /// Clears EPT dirty bits of data pages so their next write is logged.
    pub fn clear_data_dirty<I: IntoIterator<Item = PageIndex>>(&mut self, pages: I, cost: &CostModel) -> TlbCharge {
        let mut any = false;
        for p in pages {
            self.flags[p as usize] &= !DATA_DIRTY;
            self.dirty_log.remove(&p);
            any = true;
        }
        self.flush_charge(any, cost)
    }

    /// Removes the EPT mapping of `page`; the next access raises an EPT fault.
    pub fn unmap_ept(&mut self, page: PageIndex) {
        self.flags[page as usize] &= !EPT_PRESENT;
    }

    /// Points `page` at a frame in `tier`. With `fill_ept` the EPT entry is
    /// installed right away, otherwise the next access faults it in.
    pub fn remap(&mut self, page: PageIndex, tier: Tier, fill_ept: bool) {
        let f = &mut self.flags[page as usize];
        *f |= DATA_DIRTY;
        if fill_ept {
            *f |= EPT_PRESENT;
        } else {
            *f &= !EPT_PRESENT;
        }
        self.set_tier(page, tier);
    }

    fn set_tier(&mut self, page: PageIndex, tier: Tier) {
        let old = std::mem::replace(&mut self.tier[page as usize], tier);
        self.resident[old.index()] -= 1;
        self.resident[tier.index()] += 1;
    }

    /// Rehomes a page without touching any mapping state. Used for initial
    /// placement.
    pub fn place(&mut self, page: PageIndex, tier: Tier) {
        self.set_tier(page, tier);
    }

    pub fn count_in(&self, tier: Tier) -> u64 {
        self.resident[tier.index()]
    }
}
