use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AccessKind, CostModel, Tier};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmCacheConfig {
    /// Bytes per cache block.
    pub block_size: u64,
}

impl Default for MmCacheConfig {
    fn default() -> Self {
        MmCacheConfig { block_size: 4096 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheOutcome {
    pub hit: bool,
    pub victim_writeback: bool,
    pub latency_ns: u64,
}

/// DRAM as a direct-mapped cache of NVM, indexed by host address.
#[derive(Clone, Debug)]
pub struct MmCache {
    block_size: u64,
    tags: Vec<Option<u64>>,
    dirty: Vec<bool>,
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
}

impl MmCache {
    pub fn new(dram_bytes: u64, cfg: &MmCacheConfig) -> Result<Self> {
        if cfg.block_size == 0 || !dram_bytes.is_multiple_of(cfg.block_size) {
            return Err(Error::Config(format!(
                "DRAM size {dram_bytes} is not a multiple of block size {}",
                cfg.block_size
            )));
        }
        let frames = (dram_bytes / cfg.block_size) as usize;
        if frames == 0 {
            return Err(Error::Config("memory-mode cache needs at least one block of DRAM".into()));
        }
        Ok(MmCache { block_size: cfg.block_size, tags: vec![None; frames], dirty: vec![false; frames], hits: 0, misses: 0, writebacks: 0 })
    }

    pub fn frames(&self) -> u64 {
        self.tags.len() as u64
    }

    pub fn access(&mut self, addr: u64, kind: AccessKind, cost: &CostModel) -> CacheOutcome {
        let block = addr / self.block_size;
        let idx = (block % self.frames()) as usize;
        if self.tags[idx] == Some(block) {
            self.hits += 1;
            self.dirty[idx] |= kind.is_write();
            return CacheOutcome { hit: true, victim_writeback: false, latency_ns: cost.access_latency(kind, Tier::Dram) };
        }
        self.misses += 1;
        let writeback = self.tags[idx].is_some() && self.dirty[idx];
        self.tags[idx] = Some(block);
        self.dirty[idx] = kind.is_write();
        let mut latency = cost.access_latency(kind, Tier::Nvm);
        if writeback {
            self.writebacks += 1;
            latency += cost.access_latency(AccessKind::Write, Tier::Nvm);
        }
        CacheOutcome { hit: false, victim_writeback: writeback, latency_ns: latency }
    }

    pub fn miss_ratio(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            0.0
        } else {
            self.misses as f64 / n as f64
        }
    }
}
