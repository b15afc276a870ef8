//! Comparison policies: a full EPT scanner, a fixed-threshold classifier, a
//! two-list LRU classifier, static first-touch placement, and a
//! direct-mapped DRAM cache in front of NVM.

mod ept_scan;
mod fixed_threshold;
mod mm_cache;
mod numa_b;
mod two_list;

pub use ept_scan::EptScanner;
pub use fixed_threshold::{fixed_threshold_classify, fixed_threshold_plan};
pub use mm_cache::{CacheOutcome, MmCache, MmCacheConfig};
pub use numa_b::{first_touch_order, numa_b_place};
pub use two_list::{TwoListConfig, TwoListState};
