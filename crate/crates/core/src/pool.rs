//! Cross-VM DRAM balancing through a shared free-frame pool.
//!
//! Each epoch every VM gets a target DRAM size from its degree histogram.
//! VMs above target demote their coldest pages and hand DRAM frames back;
//! VMs below target then receive frames, largest deficit first, and promote
//! their hottest NVM pages into them. All moves are one-way and run while
//! the VMs are quiesced.

use serde::{Deserialize, Serialize};

use crate::classifier::{coldest_in, hot_set_size, hottest_in, ClassifierConfig, Degree, Ranking};
use crate::error::{Error, Result};
use crate::migrator::VmFrames;
use crate::mmu::{Mmu, TlbCharge};
use crate::model::{CostModel, PageIndex, SimTime, Tier, VmId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub lower_ratio: f64,
    pub upper_ratio: f64,
    /// Rebalance cadence, applied at the first epoch boundary at or after
    /// each period mark. `None` means every epoch.
    pub rebalance_period: Option<SimTime>,
    /// Largest quota change per VM per rebalance, in frames.
    pub step_cap: Option<u64>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { lower_ratio: 0.75, upper_ratio: 1.25, rebalance_period: None, step_cap: None }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower_ratio > 0.0 && self.lower_ratio <= 1.0 && self.upper_ratio >= 1.0) {
            return Err(Error::Config(format!(
                "pool limits need 0 < lower_ratio <= 1 <= upper_ratio, got {} and {}",
                self.lower_ratio, self.upper_ratio
            )));
        }
        Ok(())
    }

    pub fn limits(&self, initial_dram: u64) -> Limits {
        Limits {
            lower: (self.lower_ratio * initial_dram as f64).ceil() as u64,
            upper: (self.upper_ratio * initial_dram as f64).floor() as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub lower: u64,
    pub upper: u64,
}

/// Free frames held by the pool per tier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub total: [u64; 2],
    pub free: [u64; 2],
}

impl PoolState {
    pub fn new(total_dram: u64, total_nvm: u64) -> Self {
        PoolState { total: [total_dram, total_nvm], free: [total_dram, total_nvm] }
    }

    pub fn take(&mut self, tier: Tier, n: u64) -> Result<()> {
        let f = &mut self.free[tier.index()];
        if *f < n {
            return Err(Error::Fault(format!("pool holds {f} free {tier:?} frames, {n} requested")));
        }
        *f -= n;
        Ok(())
    }

    pub fn give(&mut self, tier: Tier, n: u64) {
        self.free[tier.index()] += n;
    }

    /// Σ quotas + free = total, per tier.
    pub fn check<'a>(&self, frames: impl IntoIterator<Item = &'a VmFrames>) -> std::result::Result<(), String> {
        let mut sum = self.free;
        for f in frames {
            sum[0] += f.quota[0];
            sum[1] += f.quota[1];
        }
        if sum != self.total {
            return Err(format!("quotas plus pool {sum:?} differ from total {:?}", self.total));
        }
        Ok(())
    }
}

/// Inputs for one VM's target.
#[derive(Clone, Copy, Debug)]
pub struct TargetInput<'a> {
    /// `None` when tracking is off for the VM.
    pub degrees: Option<&'a [Degree]>,
    pub quota: u64,
    pub limits: Limits,
}

pub fn compute_targets(vms: &[TargetInput<'_>], cfg: &ClassifierConfig) -> Vec<u64> {
    vms.iter()
        .map(|v| match v.degrees {
            Some(d) => hot_set_size(d, cfg, v.limits.lower, v.limits.upper),
            None => v.quota,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebalancePlan {
    /// (vm, frames released), in VM order.
    pub shrink: Vec<(VmId, u64)>,
    /// (vm, frames granted), in grant order.
    pub grow: Vec<(VmId, u64)>,
}

impl RebalancePlan {
    pub fn is_empty(&self) -> bool {
        self.shrink.is_empty() && self.grow.is_empty()
    }
}

/// Shrinks first, then grants the pool's supply by descending deficit
/// (ties to the lower VM id).
pub fn rebalance(quotas: &[u64], targets: &[u64], pool_free_dram: u64, step_cap: Option<u64>) -> RebalancePlan {
    let cap = step_cap.unwrap_or(u64::MAX);
    let mut plan = RebalancePlan::default();
    let mut supply = pool_free_dram;
    for (vm, (&q, &t)) in quotas.iter().zip(targets).enumerate() {
        if q > t {
            let k = (q - t).min(cap);
            plan.shrink.push((vm as VmId, k));
            supply += k;
        }
    }
    let mut growers: Vec<(VmId, u64)> = quotas
        .iter()
        .zip(targets)
        .enumerate()
        .filter(|(_, (&q, &t))| t > q)
        .map(|(vm, (&q, &t))| (vm as VmId, (t - q).min(cap)))
        .collect();
    growers.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (vm, deficit) in growers {
        let g = deficit.min(supply);
        if g == 0 {
            break;
        }
        supply -= g;
        plan.grow.push((vm, g));
    }
    plan
}

/// A VM as seen by the pool.
pub trait PoolMember: Clone {
    fn frames(&self) -> &VmFrames;
    fn frames_mut(&mut self) -> &mut VmFrames;
    /// Moves up to `n` pages from `src` to `dst` while the VM is stopped:
    /// coldest first when demoting, hottest first when promoting. Returns
    /// the number moved.
    fn quiesced_move(&mut self, n: u64, src: Tier, dst: Tier, cost: &CostModel) -> Result<u64>;
    /// Free NVM frames the VM keeps for migration staging.
    fn nvm_reserve(&self) -> u64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuiescedMove {
    pub pages: u64,
    pub pause_ns: u64,
    pub tlb: TlbCharge,
}

/// Synchronous one-way move used by pool members: no concurrent writes, so
/// no recopy, and new mappings go straight into the EPT.
#[allow(clippy::too_many_arguments)]
pub fn move_pages_quiesced(
    mmu: &mut Mmu,
    frames: &mut VmFrames,
    ranking: &Ranking,
    n: u64,
    src: Tier,
    dst: Tier,
    threads: u32,
    cost: &CostModel,
) -> Result<QuiescedMove> {
    let n = n.min(frames.free(dst));
    let pages: Vec<PageIndex> = if src == Tier::Dram {
        coldest_in(ranking, mmu.tiers(), src, n as usize)
    } else {
        hottest_in(ranking, mmu.tiers(), src, n as usize)
    };
    if pages.is_empty() {
        return Ok(QuiescedMove::default());
    }
    let k = pages.len() as u64;
    frames.alloc(dst, k)?;
    for &p in &pages {
        mmu.remap(p, dst, true);
    }
    frames.release(src, k)?;
    let pause_ns = cost.transfer_time(k * mmu.geometry().page_size, src, dst, threads)?;
    Ok(QuiescedMove { pages: k, pause_ns, tlb: mmu.flush_tlb(cost) })
}

/// Brings a member's NVM quota to `used + reserve`, trading frames with the
/// pool. Returns false when the pool cannot cover the reserve in full.
fn settle_nvm<M: PoolMember>(m: &mut M, pool: &mut PoolState) -> bool {
    let want = m.frames().used[1] + m.nvm_reserve();
    let have = m.frames().quota[1];
    if have > want {
        m.frames_mut().quota[1] = want;
        pool.give(Tier::Nvm, have - want);
        true
    } else {
        let need = want - have;
        let got = need.min(pool.free[1]);
        pool.free[1] -= got;
        m.frames_mut().quota[1] += got;
        got == need
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ApplyOutcome {
    pub demoted: Vec<(VmId, u64)>,
    pub promoted: Vec<(VmId, u64)>,
}

/// Executes `plan`. If frame accounting breaks at any step every member and
/// the pool are restored to their state on entry.
pub fn apply_plan<M: PoolMember>(
    members: &mut [M],
    pool: &mut PoolState,
    plan: &RebalancePlan,
    cost: &CostModel,
) -> Result<ApplyOutcome> {
    if plan.is_empty() {
        return Ok(ApplyOutcome::default());
    }
    let snapshot = (members.to_vec(), *pool);
    match apply_steps(members, pool, plan, cost) {
        Ok(out) => Ok(out),
        Err(e) => {
            members.clone_from_slice(&snapshot.0);
            *pool = snapshot.1;
            Err(e)
        }
    }
}

fn breach(detail: String) -> Error {
    Error::InvariantBreach { module: "pool", time_ns: 0, detail, digest: 0 }
}

fn apply_steps<M: PoolMember>(
    members: &mut [M],
    pool: &mut PoolState,
    plan: &RebalancePlan,
    cost: &CostModel,
) -> Result<ApplyOutcome> {
    let mut out = ApplyOutcome::default();
    let verify = |members: &[M], pool: &PoolState| -> Result<()> {
        pool.check(members.iter().map(|m| m.frames())).map_err(breach)?;
        for (vm, m) in members.iter().enumerate() {
            let f = m.frames();
            if f.used[0] > f.quota[0] || f.used[1] > f.quota[1] {
                return Err(breach(format!("vm {vm} uses {:?} frames under quota {:?}", f.used, f.quota)));
            }
        }
        Ok(())
    };

    for &(vm, k) in &plan.shrink {
        let m = &mut members[vm as usize];
        // Make room on NVM, demote whatever the freed DRAM frames hold.
        let free_dram = m.frames().free(Tier::Dram);
        let to_move = k.saturating_sub(free_dram);
        let nvm_free = m.frames().free(Tier::Nvm);
        if nvm_free < to_move {
            pool.take(Tier::Nvm, to_move - nvm_free)?;
            m.frames_mut().quota[1] += to_move - nvm_free;
        }
        let moved = m.quiesced_move(to_move, Tier::Dram, Tier::Nvm, cost)?;
        let released = (free_dram + moved).min(k);
        m.frames_mut().quota[0] -= released;
        pool.give(Tier::Dram, released);
        settle_nvm(m, pool);
        out.demoted.push((vm, moved));
        verify(members, pool)?;
    }

    for &(vm, g) in &plan.grow {
        let g = g.min(pool.free[0]);
        if g == 0 {
            continue;
        }
        pool.take(Tier::Dram, g)?;
        let m = &mut members[vm as usize];
        m.frames_mut().quota[0] += g;
        let moved = m.quiesced_move(g, Tier::Nvm, Tier::Dram, cost)?;
        settle_nvm(m, pool);
        out.promoted.push((vm, moved));
        verify(members, pool)?;
    }
    Ok(out)
}
