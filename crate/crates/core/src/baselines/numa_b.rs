use crate::model::{PageIndex, Tier};
use crate::workload::AccessEvent;

/// Distinct pages of one VM in order of first access, followed by the
/// untouched pages in ascending order.
pub fn first_touch_order<'a>(events: impl IntoIterator<Item = &'a AccessEvent>, mapped_pages: u64) -> Vec<PageIndex> {
    let mut seen = vec![false; mapped_pages as usize];
    let mut order = Vec::with_capacity(mapped_pages as usize);
    for e in events {
        if !seen[e.page as usize] {
            seen[e.page as usize] = true;
            order.push(e.page);
        }
    }
    order.extend((0..mapped_pages).filter(|&p| !seen[p as usize]));
    order
}

/// DRAM-preferred static allocation: the first `dram_quota` pages of the
/// first-touch order land in DRAM, the rest in NVM.
pub fn numa_b_place(first_touch: &[PageIndex], mapped_pages: u64, dram_quota: u64) -> Vec<Tier> {
    let mut tiers = vec![Tier::Nvm; mapped_pages as usize];
    for &p in first_touch.iter().take(dram_quota as usize) {
        tiers[p as usize] = Tier::Dram;
    }
    tiers
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reads(pages: &[u64]) -> Vec<AccessEvent> {
        pages.iter().enumerate().map(|(t, &p)| AccessEvent::read(t as u64, 0, p)).collect()
    }

    #[test]
    fn footprint_within_quota_is_all_dram() {
        let evs = reads(&[3, 1, 2, 0]);
        let t = numa_b_place(&first_touch_order(&evs, 4), 4, 4);
        assert!(t.iter().all(|&t| t == Tier::Dram));
    }

    #[test]
    fn late_hot_region_is_stranded() {
        // Cold pages 0..4 touched first, hot pages 4..8 touched last and often.
        let mut pages: Vec<u64> = (0..4).collect();
        for _ in 0..10 {
            pages.extend(4..8);
        }
        let t = numa_b_place(&first_touch_order(&reads(&pages), 8), 8, 4);
        assert!((4..8).all(|p| t[p] == Tier::Nvm));
    }

    #[test]
    fn double_footprint_splits_evenly() {
        let evs = reads(&(0..100).collect::<Vec<_>>());
        let t = numa_b_place(&first_touch_order(&evs, 100), 100, 50);
        assert_eq!(t.iter().filter(|&&t| t == Tier::Dram).count(), 50);
    }

    #[test]
    fn untouched_pages_follow() {
        assert_eq!(first_touch_order(&reads(&[5, 2, 5]), 6), vec![5, 2, 0, 1, 3, 4]);
    }

    proptest! {
        // Placement depends on the trace only through its first-touch order.
        #[test]
        fn pure_in_first_touch(pages in proptest::collection::vec(0u64..50, 0..200), q in 0u64..60) {
            let evs = reads(&pages);
            let order = first_touch_order(&evs, 50);
            let mut dup = pages.clone();
            dup.extend(pages.iter().rev());
            let order2 = first_touch_order(&reads(&dup), 50);
            prop_assert_eq!(&order, &order2);
            prop_assert_eq!(numa_b_place(&order, 50, q), numa_b_place(&order2, 50, q));
        }
    }
}
