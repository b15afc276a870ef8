//! Page-degree ranking and hot-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PageIndex, Tier};
use crate::tracker::PageCounts;

pub type Degree = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub read_weight: u32,
    pub write_weight: u32,
    pub base_threshold: Degree,
    pub hot_take_ratio: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { read_weight: 1, write_weight: 3, base_threshold: 3, hot_take_ratio: 0.8 }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.read_weight == 0 && self.write_weight == 0 {
            return Err(Error::Config("read and write weights cannot both be zero".into()));
        }
        if !(self.hot_take_ratio > 0.0 && self.hot_take_ratio <= 1.0) {
            return Err(Error::Config(format!("hot_take_ratio {} outside (0, 1]", self.hot_take_ratio)));
        }
        Ok(())
    }

    pub fn max_degree(&self, windows_per_epoch: u32) -> Degree {
        (self.read_weight + self.write_weight) * windows_per_epoch
    }
}

pub fn page_degree(counts: PageCounts, cfg: &ClassifierConfig) -> Degree {
    cfg.read_weight * counts.reads + cfg.write_weight * counts.writes
}

pub fn degrees(counts: &[PageCounts], cfg: &ClassifierConfig) -> Vec<Degree> {
    counts.iter().map(|&c| page_degree(c, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeHistogram {
    pub buckets: Vec<u64>,
}

impl DegreeHistogram {
    pub fn build(degrees: &[Degree], max_degree: Degree) -> Result<Self> {
        let mut buckets = vec![0u64; max_degree as usize + 1];
        for &d in degrees {
            *buckets.get_mut(d as usize).ok_or_else(|| out_of_range(d, max_degree))? += 1;
        }
        Ok(DegreeHistogram { buckets })
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().sum()
    }
}

fn out_of_range(d: Degree, max: Degree) -> Error {
    Error::InvariantBreach {
        module: "classifier",
        time_ns: 0,
        detail: format!("degree {d} above maximum {max}"),
        digest: 0,
    }
}

/// Pages in descending degree order plus the degree of every page.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    pub order: Vec<PageIndex>,
    /// Indexed by page.
    pub degree: Vec<Degree>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Orders `(page, degree)` pairs by descending degree in linear time. Pages
/// sharing a degree keep their input order.
pub fn bucket_sort(items: &[(PageIndex, Degree)], max_degree: Degree) -> Result<Vec<PageIndex>> {
    let mut counts = vec![0usize; max_degree as usize + 1];
    for &(_, d) in items {
        *counts.get_mut(d as usize).ok_or_else(|| out_of_range(d, max_degree))? += 1;
    }
    // Start offset of each bucket, highest degree first.
    let mut start = vec![0usize; counts.len()];
    let mut acc = 0;
    for d in (0..counts.len()).rev() {
        start[d] = acc;
        acc += counts[d];
    }
    let mut out = vec![0; items.len()];
    for &(p, d) in items {
        out[start[d as usize]] = p;
        start[d as usize] += 1;
    }
    Ok(out)
}

/// Ranks pages `0..degrees.len()`; ties resolve to ascending page index.
pub fn rank(degrees: Vec<Degree>, max_degree: Degree) -> Result<Ranking> {
    let items: Vec<(PageIndex, Degree)> = degrees.iter().enumerate().map(|(p, &d)| (p as PageIndex, d)).collect();
    let order = bucket_sort(&items, max_degree)?;
    Ok(Ranking { order, degree: degrees })
}

pub fn select_hotset(order: &[PageIndex], capacity: u64) -> &[PageIndex] {
    &order[..(capacity as usize).min(order.len())]
}

/// DRAM pages a VM should hold in pool mode: a fraction of the pages above
/// the base threshold, clamped to `[lower, upper]`.
pub fn hot_set_size(degrees: &[Degree], cfg: &ClassifierConfig, lower: u64, upper: u64) -> u64 {
    debug_assert!(lower <= upper);
    let above = degrees.iter().filter(|&&d| d > cfg.base_threshold).count();
    let take = (cfg.hot_take_ratio * above as f64).floor() as u64;
    take.clamp(lower, upper)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationPlan {
    /// NVM pages to bring into DRAM, hottest first.
    pub promote: Vec<PageIndex>,
    /// DRAM pages to push to NVM, coldest first.
    pub demote: Vec<PageIndex>,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.promote.is_empty() && self.demote.is_empty()
    }

    pub fn pages(&self) -> usize {
        self.promote.len() + self.demote.len()
    }
}

/// Exchanges NVM pages of the top-`dram_quota` prefix with the coldest DRAM
/// pages outside it, pairwise, while the incoming page is strictly hotter.
pub fn diff_placement(ranking: &Ranking, tiers: &[Tier], dram_quota: u64) -> MigrationPlan {
    let hot = select_hotset(&ranking.order, dram_quota);
    let rest = &ranking.order[hot.len()..];
    let promote_candidates = hot.iter().copied().filter(|&p| tiers[p as usize] == Tier::Nvm);
    let mut demote_candidates = rest.iter().rev().copied().filter(|&p| tiers[p as usize] == Tier::Dram);
    let mut plan = MigrationPlan::default();
    for up in promote_candidates {
        let Some(down) = demote_candidates.next() else { break };
        if ranking.degree[up as usize] <= ranking.degree[down as usize] {
            break;
        }
        plan.promote.push(up);
        plan.demote.push(down);
    }
    plan
}

/// The `k` hottest NVM pages, hottest first.
pub fn hottest_in(ranking: &Ranking, tiers: &[Tier], tier: Tier, k: usize) -> Vec<PageIndex> {
    ranking.order.iter().copied().filter(|&p| tiers[p as usize] == tier).take(k).collect()
}

/// The `k` coldest pages resident in `tier`, coldest first.
pub fn coldest_in(ranking: &Ranking, tiers: &[Tier], tier: Tier, k: usize) -> Vec<PageIndex> {
    ranking.order.iter().rev().copied().filter(|&p| tiers[p as usize] == tier).take(k).collect()
}
