use crate::classifier::{Degree, MigrationPlan, Ranking};
use crate::model::{PageIndex, Tier};

/// Pages whose degree reaches `threshold`, ascending by page index.
pub fn fixed_threshold_classify(degrees: &[Degree], threshold: Degree) -> Vec<PageIndex> {
    degrees.iter().enumerate().filter(|(_, &d)| d >= threshold).map(|(p, _)| p as PageIndex).collect()
}

/// Swaps hot NVM pages (by page index) with non-hot DRAM pages (coldest
/// first). The hot set's size ignores DRAM capacity; exchanges stop when
/// either side runs out.
pub fn fixed_threshold_plan(ranking: &Ranking, tiers: &[Tier], threshold: Degree) -> MigrationPlan {
    let hot = fixed_threshold_classify(&ranking.degree, threshold);
    let promote: Vec<PageIndex> = hot.into_iter().filter(|&p| tiers[p as usize] == Tier::Nvm).collect();
    let demote: Vec<PageIndex> = ranking
        .order
        .iter()
        .rev()
        .copied()
        .filter(|&p| tiers[p as usize] == Tier::Dram && ranking.degree[p as usize] < threshold)
        .take(promote.len())
        .collect();
    let n = demote.len();
    MigrationPlan { promote: promote[..n].to_vec(), demote }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::rank;
    use proptest::prelude::*;

    #[test]
    fn threshold_extremes() {
        let d = vec![0, 5, 32, 7];
        assert_eq!(fixed_threshold_classify(&d, 0), vec![0, 1, 2, 3]);
        assert!(fixed_threshold_classify(&d, 33).is_empty());
        assert_eq!(fixed_threshold_classify(&d, 6), vec![2, 3]);
    }

    #[test]
    fn plan_ignores_capacity_order() {
        use Tier::*;
        let r = rank(vec![1, 9, 9, 0, 2], 32).unwrap();
        let p = fixed_threshold_plan(&r, &[Dram, Nvm, Nvm, Dram, Dram], 5);
        assert_eq!(p.promote, vec![1, 2]);
        assert_eq!(p.demote, vec![3, 0]);
    }

    proptest! {
        #[test]
        fn monotone_in_threshold(d in proptest::collection::vec(0u32..=32, 0..200), t1 in 0u32..34, dt in 0u32..10) {
            let lo: std::collections::BTreeSet<_> = fixed_threshold_classify(&d, t1).into_iter().collect();
            let hi: std::collections::BTreeSet<_> = fixed_threshold_classify(&d, t1 + dt).into_iter().collect();
            prop_assert!(hi.is_subset(&lo));
        }
    }
}
