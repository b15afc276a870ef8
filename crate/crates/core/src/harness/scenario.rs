//! Declarative scenario description, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{first_touch_order, MmCacheConfig, TwoListConfig};
use crate::classifier::{ClassifierConfig, Degree};
use crate::error::{Error, Result};
use crate::migrator::{MigratorConfig, Protocol};
use crate::model::{CostModel, PageGeometry, PageIndex, VcpuId};
use crate::pool::PoolConfig;
use crate::tracker::TrackerConfig;
use crate::workload::{
    gen_hotspot, gen_sequential, gen_uniform, load_trace, load_trace_csv, HotspotSpec, SequentialSpec, Trace,
    UniformSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    HmmvIsland,
    HmmvPool,
    EptScan,
    FixedThreshold(Degree),
    TwoList,
    NumaB,
    MmCache,
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::HmmvIsland => "hmmv_island".into(),
            Policy::HmmvPool => "hmmv_pool".into(),
            Policy::EptScan => "ept_scan".into(),
            Policy::FixedThreshold(t) => format!("fixed_threshold_{t}"),
            Policy::TwoList => "two_list".into(),
            Policy::NumaB => "numa_b".into(),
            Policy::MmCache => "mm_cache".into(),
        }
    }

    /// Parses the names produced by [`Policy::name`] plus `fixed_threshold=T`.
    pub fn parse(s: &str) -> Result<Policy> {
        let s = s.trim();
        let threshold = s.strip_prefix("fixed_threshold").map(|r| r.trim_start_matches(['=', '_', ':']));
        if let Some(t) = threshold {
            let t = t.parse().map_err(|_| Error::Validation(format!("bad fixed_threshold value in {s:?}")))?;
            return Ok(Policy::FixedThreshold(t));
        }
        Ok(match s {
            "hmmv_island" | "hmmv" => Policy::HmmvIsland,
            "hmmv_pool" => Policy::HmmvPool,
            "ept_scan" => Policy::EptScan,
            "two_list" => Policy::TwoList,
            "numa_b" => Policy::NumaB,
            "mm_cache" => Policy::MmCache,
            other => return Err(Error::Validation(format!("unknown policy {other:?}"))),
        })
    }

    pub fn default_protocol(&self) -> Protocol {
        match self {
            Policy::FixedThreshold(_) => Protocol::Wp,
            Policy::TwoList => Protocol::Linux,
            _ => Protocol::Pml,
        }
    }

    pub fn migrates(&self) -> bool {
        !matches!(self, Policy::NumaB | Policy::MmCache)
    }

    /// Policies driven by the PML-guided GPT scanner.
    pub fn uses_gpt_tracker(&self) -> bool {
        matches!(self, Policy::HmmvIsland | Policy::HmmvPool | Policy::FixedThreshold(_))
    }

    /// Policies whose tracking obeys the clock switch.
    pub fn uses_clock(&self) -> bool {
        matches!(self, Policy::HmmvIsland | Policy::HmmvPool)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    Hotspot(HotspotSpec),
    Sequential(SequentialSpec),
    Uniform(UniformSpec),
    /// Binary trace file, or CSV when the extension is `.csv`.
    File(PathBuf),
    /// Sources played back to back with `gap` ns between them.
    Concat { parts: Vec<TraceSource>, #[serde(default)] gap: u64 },
}

pub(crate) fn mix_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TraceSource {
    /// Builds the trace. Generator seeds are mixed with `seed` so one
    /// scenario seed varies every VM's workload.
    pub fn load(&self, seed: u64, base_dir: &Path) -> Result<Trace> {
        match self {
            TraceSource::Hotspot(s) => gen_hotspot(&HotspotSpec { seed: mix_seed(seed, s.seed), ..s.clone() }),
            TraceSource::Sequential(s) => gen_sequential(&SequentialSpec { seed: mix_seed(seed, s.seed), ..s.clone() }),
            TraceSource::Uniform(s) => gen_uniform(&UniformSpec { seed: mix_seed(seed, s.seed), ..s.clone() }),
            TraceSource::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                if path.extension().is_some_and(|e| e == "csv") {
                    load_trace_csv(&path)
                } else {
                    load_trace(&path)
                }
            }
            TraceSource::Concat { parts, gap } => {
                let mut out = Trace::default();
                for (i, part) in parts.iter().enumerate() {
                    out = out.then(part.load(mix_seed(seed, i as u64 + 1), base_dir)?, *gap);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstTouch {
    /// Order of first access in the trace.
    #[default]
    Trace,
    Ascending,
    Descending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmSpec {
    pub mapped_pages: u64,
    pub initial_dram_quota: u64,
    #[serde(default = "one_vcpu")]
    pub vcpus: VcpuId,
    pub trace: TraceSource,
    /// Order in which the guest first allocated its memory; decides the
    /// initial DRAM-preferred placement.
    #[serde(default)]
    pub first_touch: FirstTouch,
}

fn one_vcpu() -> VcpuId {
    1
}

impl VmSpec {
    pub fn allocation_order(&self, trace: &Trace) -> Vec<PageIndex> {
        match self.first_touch {
            FirstTouch::Trace => first_touch_order(&trace.events, self.mapped_pages),
            FirstTouch::Ascending => (0..self.mapped_pages).collect(),
            FirstTouch::Descending => (0..self.mapped_pages).rev().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub policy: Policy,
    /// Overrides the policy's migration protocol.
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub geometry: PageGeometry,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub migrator: MigratorConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub two_list: TwoListConfig,
    #[serde(default)]
    pub mm_cache: MmCacheConfig,
    /// Host DRAM frames; defaults to the sum of initial quotas.
    #[serde(default)]
    pub total_dram_frames: Option<u64>,
    /// Host NVM frames; defaults to what the initial placement needs.
    #[serde(default)]
    pub total_nvm_frames: Option<u64>,
    /// Check frame conservation after every event.
    #[serde(default)]
    pub check_invariants: bool,
    pub vms: Vec<VmSpec>,
    /// Directory relative trace paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("scenario: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let mut s = Scenario::from_toml(&std::fs::read_to_string(path)?)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol.unwrap_or_else(|| self.policy.default_protocol())
    }

    /// Tracker settings as the policy runs them: baselines never switch off.
    pub fn tracker_config(&self) -> TrackerConfig {
        let mut t = self.tracker.clone();
        if !self.policy.uses_clock() {
            t.clock_period = None;
        }
        t
    }

    pub fn nvm_reserve(&self) -> u64 {
        if self.policy.migrates() {
            self.migrator.batch_cap as u64
        } else {
            0
        }
    }

    pub fn total_dram(&self) -> u64 {
        self.total_dram_frames.unwrap_or_else(|| self.vms.iter().map(|v| v.initial_dram_quota).sum())
    }

    /// Structural checks that need no trace data.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.cost.validate()?;
        self.tracker.validate()?;
        self.classifier.validate()?;
        self.migrator.validate()?;
        self.pool.validate()?;
        self.two_list.validate()?;
        if self.vms.is_empty() {
            return Err(Error::Validation("scenario has no VMs".into()));
        }
        if self.vms.len() > u16::MAX as usize {
            return Err(Error::Validation("too many VMs".into()));
        }
        for (i, v) in self.vms.iter().enumerate() {
            if v.vcpus == 0 {
                return Err(Error::Validation(format!("vm {i} has no vcpus")));
            }
            if v.initial_dram_quota > v.mapped_pages {
                return Err(Error::Validation(format!(
                    "vm {i}: DRAM quota {} exceeds its {} mapped pages",
                    v.initial_dram_quota, v.mapped_pages
                )));
            }
        }
        let quotas: u64 = self.vms.iter().map(|v| v.initial_dram_quota).sum();
        if quotas > self.total_dram() {
            return Err(Error::Validation(format!(
                "initial DRAM quotas sum to {quotas} frames, host has {}",
                self.total_dram()
            )));
        }
        if self.pool.rebalance_period == Some(0) {
            return Err(Error::Validation("rebalance_period must be positive".into()));
        }
        if self.policy == Policy::MmCache {
            let bytes = self.total_dram() * self.geometry.page_size;
            if bytes == 0 || !bytes.is_multiple_of(self.mm_cache.block_size) {
                return Err(Error::Validation(format!(
                    "memory-mode cache of {bytes} bytes does not divide into {}-byte blocks",
                    self.mm_cache.block_size
                )));
            }
        }
        Ok(())
    }

    /// Sets a value by dotted path, e.g. `tracker.mws` or
    /// `vms.0.trace.hotspot.hot_fraction`. The value is parsed as TOML.
    pub fn with_param(&self, path: &str, value: &str) -> Result<Scenario> {
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .map(|mut t| t.remove("v").expect("key present"))
            .unwrap_or_else(|_| toml::Value::String(value.to_string()));
        let mut node = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (depth, key) in parts.iter().enumerate() {
            let last = depth + 1 == parts.len();
            node = match node {
                toml::Value::Table(t) => {
                    if last {
                        t.insert((*key).to_string(), parsed);
                        break;
                    }
                    t.get_mut(*key).ok_or_else(|| Error::Validation(format!("no field {key:?} in {path:?}")))?
                }
                toml::Value::Array(a) => {
                    let i: usize = key.parse().map_err(|_| Error::Validation(format!("{key:?} is not an index in {path:?}")))?;
                    let len = a.len();
                    let slot = a.get_mut(i).ok_or_else(|| Error::Validation(format!("index {i} out of {len} in {path:?}")))?;
                    if last {
                        *slot = parsed;
                        break;
                    }
                    slot
                }
                _ => return Err(Error::Validation(format!("cannot descend into {key:?} in {path:?}"))),
            };
        }
        let mut s: Scenario = doc.try_into().map_err(|e: toml::de::Error| Error::Validation(format!("{path}: {}", e.message())))?;
        s.base_dir = self.base_dir.clone();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        policy = "hmmv_island"
        [[vms]]
        mapped_pages = 1024
        initial_dram_quota = 512
        trace = { hotspot = { total_pages = 1024, hot_fraction = 0.2, hot_access_prob = 0.9, read_ratio = 0.5, ops = 1000 } }
    "#;

    #[test]
    fn minimal_parses_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        s.validate().unwrap();
        assert_eq!(s.tracker.windows_per_epoch, 8);
        assert_eq!(s.protocol(), Protocol::Pml);
        assert_eq!(s.total_dram(), 512);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("bogus = 1\n{MINIMAL}");
        assert!(matches!(Scenario::from_toml(&text), Err(Error::Validation(_))));
        let text = MINIMAL.replace("ops = 1000", "ops = 1000, wat = 2");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn policy_forms() {
        let s = Scenario::from_toml(&MINIMAL.replace("\"hmmv_island\"", "{ fixed_threshold = 12 }")).unwrap();
        assert_eq!(s.policy, Policy::FixedThreshold(12));
        assert_eq!(s.protocol(), Protocol::Wp);
        assert_eq!(Policy::parse("fixed_threshold=5").unwrap(), Policy::FixedThreshold(5));
        for p in [Policy::HmmvPool, Policy::TwoList, Policy::FixedThreshold(9), Policy::MmCache] {
            assert_eq!(Policy::parse(&p.name()).unwrap(), p);
        }
        assert!(Policy::parse("lru").is_err());
    }

    #[test]
    fn quota_overflow_rejected() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.total_dram_frames = Some(100);
        assert!(s.validate().is_err());
        s.total_dram_frames = None;
        s.vms[0].initial_dram_quota = 2000;
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_params() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let back = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s, back);
        let t = s.with_param("vms.0.trace.hotspot.hot_fraction", "0.4").unwrap();
        match &t.vms[0].trace {
            TraceSource::Hotspot(h) => assert_eq!(h.hot_fraction, 0.4),
            _ => unreachable!(),
        }
        assert_eq!(s.with_param("tracker.mws", "1000").unwrap().tracker.mws, 1000);
        assert_eq!(s.with_param("policy", "numa_b").unwrap().policy, Policy::NumaB);
        assert!(s.with_param("tracker.nope.x", "1").is_err());
    }

    #[test]
    fn seeds_vary_traces() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let dir = Path::new(".");
        let a = s.vms[0].trace.load(1, dir).unwrap();
        let b = s.vms[0].trace.load(2, dir).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, s.vms[0].trace.load(1, dir).unwrap());
    }
}
