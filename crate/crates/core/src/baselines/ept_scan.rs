use crate::error::Result;
use crate::mmu::Mmu;
use crate::model::{CostModel, PageIndex};
use crate::tracker::{Observation, PageCounts, WindowReport};

/// Walks every mapped PTE each window, records and clears A/D bits.
#[derive(Clone, Debug)]
pub struct EptScanner {
    counts: Vec<PageCounts>,
}

impl EptScanner {
    pub fn new(mapped_pages: u64) -> Self {
        EptScanner { counts: vec![PageCounts::default(); mapped_pages as usize] }
    }

    pub fn start_epoch(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = PageCounts::default());
    }

    pub fn end_window(&mut self, mmu: &mut Mmu, cost: &CostModel) -> Result<WindowReport> {
        let mapped = mmu.mapped_pages();
        let mut report = WindowReport {
            gpt_pages_scanned: mmu.gpt_pages(),
            data_pages_examined: mapped,
            scan_ns: mapped * cost.pte_scan_cost_ns,
            ..WindowReport::default()
        };
        let mut seen: Vec<PageIndex> = Vec::new();
        for page in 0..mapped {
            let pte = mmu.guest_pte(page);
            if pte.accessed {
                let c = &mut self.counts[page as usize];
                c.reads += 1;
                c.writes += u32::from(pte.dirty);
                report.observations.push(Observation { page, read_seen: true, write_seen: pte.dirty });
                seen.push(page);
            }
        }
        mmu.clear_guest_ad(seen, cost);
        if mapped > 0 {
            report.tlb = mmu.flush_tlb(cost);
        }
        Ok(report)
    }

    pub fn epoch_counts(&self) -> Vec<PageCounts> {
        self.counts.clone()
    }
}
