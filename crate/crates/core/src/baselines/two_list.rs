use serde::{Deserialize, Serialize};

use crate::classifier::Ranking;
use crate::error::{Error, Result};
use crate::model::PageIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoListConfig {
    /// Windows between aging passes.
    pub aging_windows: u32,
}

impl Default for TwoListConfig {
    fn default() -> Self {
        TwoListConfig { aging_windows: 1 }
    }
}

impl TwoListConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aging_windows == 0 {
            return Err(Error::Config("aging_windows must be at least 1".into()));
        }
        Ok(())
    }
}

/// Active/inactive page lists kept as recency stamps: a referenced page
/// moves to the active head; aging moves active pages not referenced since
/// the previous pass back to the inactive list.
#[derive(Clone, Debug)]
pub struct TwoListState {
    active: Vec<bool>,
    stamp: Vec<u64>,
    clock: u64,
    last_aging: u64,
}

impl TwoListState {
    pub fn new(mapped_pages: u64) -> Self {
        TwoListState {
            active: vec![false; mapped_pages as usize],
            stamp: vec![0; mapped_pages as usize],
            clock: 1,
            last_aging: 0,
        }
    }

    pub fn update(&mut self, page: PageIndex, accessed: bool) {
        if accessed {
            self.active[page as usize] = true;
            self.stamp[page as usize] = self.clock;
            self.clock += 1;
        }
    }

    pub fn age(&mut self) {
        for (a, &s) in self.active.iter_mut().zip(&self.stamp) {
            if *a && s <= self.last_aging {
                *a = false;
            }
        }
        self.last_aging = self.clock - 1;
    }

    pub fn is_active(&self, page: PageIndex) -> bool {
        self.active[page as usize]
    }

    /// Active pages, most recently referenced first.
    pub fn active_list(&self) -> Vec<PageIndex> {
        let mut v: Vec<PageIndex> = (0..self.active.len() as u64).filter(|&p| self.active[p as usize]).collect();
        v.sort_by(|&a, &b| self.stamp[b as usize].cmp(&self.stamp[a as usize]));
        v
    }

    pub fn inactive_list(&self) -> Vec<PageIndex> {
        (0..self.active.len() as u64).filter(|&p| !self.active[p as usize]).collect()
    }

    /// Active list truncated to `capacity`.
    pub fn classify(&self, capacity: u64) -> Vec<PageIndex> {
        let mut v = self.active_list();
        v.truncate(capacity as usize);
        v
    }

    /// Ranking with degree 1 for active and 0 for inactive pages, active
    /// pages by recency, so degree-based placement applies unchanged.
    pub fn ranking(&self) -> Ranking {
        let mut order = self.active_list();
        order.extend(self.inactive_list());
        let degree = self.active.iter().map(|&a| u32::from(a)).collect();
        Ranking { order, degree }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_access_activates_idle_page() {
        let mut s = TwoListState::new(8);
        for _ in 0..50 {
            s.age();
        }
        s.update(5, true);
        assert!(s.is_active(5));
        assert_eq!(s.classify(1), vec![5]);
    }

    #[test]
    fn untouched_stays_inactive() {
        let mut s = TwoListState::new(4);
        s.update(1, true);
        s.age();
        assert!(!s.is_active(0));
    }

    #[test]
    fn aging_drops_unreferenced() {
        let mut s = TwoListState::new(4);
        s.update(0, true);
        s.update(1, true);
        s.age();
        assert!(s.is_active(0) && s.is_active(1));
        s.update(1, true);
        s.age();
        assert!(!s.is_active(0) && s.is_active(1));
        assert_eq!(s.ranking().order, vec![1, 0, 2, 3]);
    }

    #[test]
    fn lists_partition_pages() {
        let mut s = TwoListState::new(16);
        for p in [3, 7, 3, 9] {
            s.update(p, true);
        }
        let mut all = s.active_list();
        all.extend(s.inactive_list());
        all.sort();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
        assert_eq!(s.active_list(), vec![9, 3, 7]);
    }

    #[test]
    fn steady_hotspot_converges() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut s = TwoListState::new(1000);
        for _ in 0..20 {
            let mut touched = std::collections::BTreeSet::new();
            for _ in 0..2000 {
                let p = if rng.gen_bool(0.95) { rng.gen_range(0..100) } else { rng.gen_range(0..1000) };
                touched.insert(p);
            }
            for p in touched {
                s.update(p, true);
            }
            s.age();
        }
        let active = s.active_list();
        let hot = active.iter().filter(|&&p| p < 100).count();
        assert_eq!(hot, 100);
    }
}
