//! Law of the absorption time `T_s` of a decreasing chain started in
//! canonical state `s`.

mod cache;
mod sim;

use serde::Serialize;
use thiserror::Error;

use crate::dist::{DistError, LatticeDist};
use crate::models::{DecrementModel, ModelError};
use crate::numeric::CompensatedSum;

pub use cache::{CacheEntry, TableCache, CACHE_FORMAT_VERSION};
pub use sim::{
    simulate_absorption, simulate_batch, simulate_one, substream, ChainSampler, SIM_TASK_SIZE,
};

/// Per-state prune threshold used by [`default_budget`].
pub const PRUNE_PER_STATE: f64 = 1e-12;

/// Total prune budget for a table up to state `n`.
pub fn default_budget(n: u64) -> f64 {
    PRUNE_PER_STATE * (n as f64 + 1.0)
}

#[derive(Debug, Error)]
pub enum AbsorbError {
    #[error("pruned mass {pruned:e} at state {state} exceeds the budget {budget:e}")]
    BudgetExceeded {
        state: u64,
        pruned: f64,
        budget: f64,
    },
    #[error("prune budget must be in [0, 1), got {0}")]
    BadBudget(f64),
    #[error("state {0} is beyond the table")]
    OutOfTable(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("cache entry {path} is corrupt: {reason}")]
    CacheCorrupt { path: String, reason: String },
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Integer law stored densely as `P(T = lo + i) = probs[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseLaw {
    pub lo: u64,
    pub probs: Vec<f64>,
    pub pruned: f64,
}

impl DenseLaw {
    pub fn point(k: u64) -> Self {
        DenseLaw {
            lo: k,
            probs: vec![1.0],
            pruned: 0.0,
        }
    }

    pub fn hi(&self) -> u64 {
        self.lo + self.probs.len() as u64 - 1
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k < self.lo {
            return 0.0;
        }
        self.probs
            .get((k - self.lo) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        let mut s = CompensatedSum::new();
        for (i, &p) in self.probs.iter().enumerate() {
            s.add(p * (self.lo + i as u64) as f64);
        }
        s.value()
    }

    pub fn to_lattice(&self) -> Result<LatticeDist, DistError> {
        LatticeDist::from_int_pmf(self.lo as i64, &self.probs, self.pruned)
    }

    /// Drops up to `tau / 2` of mass from each end.
    fn prune_tails(&mut self, tau: f64) {
        let half = 0.5 * tau;
        let mut left = 0.0;
        let mut cut_lo = 0;
        while cut_lo + 1 < self.probs.len() && left + self.probs[cut_lo] <= half {
            left += self.probs[cut_lo];
            cut_lo += 1;
        }
        let mut right = 0.0;
        let mut cut_hi = self.probs.len();
        while cut_hi > cut_lo + 1 && right + self.probs[cut_hi - 1] <= half {
            right += self.probs[cut_hi - 1];
            cut_hi -= 1;
        }
        if cut_lo > 0 || cut_hi < self.probs.len() {
            self.probs.truncate(cut_hi);
            self.probs.drain(..cut_lo);
            self.lo += cut_lo as u64;
            self.pruned += left + right;
        }
    }
}

/// Laws and means of `T_0, ..., T_n` for one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorptionTable {
    pub model: String,
    pub params_hash: String,
    pub n_max: u64,
    pub budget: f64,
    pub laws: Vec<DenseLaw>,
    /// `E T_k` by the mean recursion.
    pub means: Vec<f64>,
}

impl AbsorptionTable {
    /// Bottom-up DP with per-state threshold `budget / (n + 1)`, so that
    /// every law keeps at least `1 - budget` of its mass.
    pub fn build(model: &DecrementModel, n: u64, budget: f64) -> Result<Self, AbsorbError> {
        if !(0.0..1.0).contains(&budget) {
            return Err(AbsorbError::BadBudget(budget));
        }
        let tau = budget / (n as f64 + 1.0);
        let mut laws = Vec::with_capacity(n as usize + 1);
        let mut means = Vec::with_capacity(n as usize + 1);
        laws.push(DenseLaw::point(0));
        means.push(0.0);
        for s in 1..=n {
            let p = model.decrement_probs(s)?;
            let law = dp_step(&p, &laws, tau);
            if law.pruned > budget * (1.0 + 1e-9) + 1e-300 {
                return Err(AbsorbError::BudgetExceeded {
                    state: s,
                    pruned: law.pruned,
                    budget,
                });
            }
            means.push(mean_step(&p, &means));
            laws.push(law);
        }
        Ok(AbsorptionTable {
            model: model.name().to_string(),
            params_hash: model.params_hash(),
            n_max: n,
            budget,
            laws,
            means,
        })
    }

    pub fn law(&self, s: u64) -> Result<&DenseLaw, AbsorbError> {
        self.laws.get(s as usize).ok_or(AbsorbError::OutOfTable(s))
    }

    pub fn lattice(&self, s: u64) -> Result<LatticeDist, AbsorbError> {
        Ok(self.law(s)?.to_lattice()?)
    }

    pub fn mean(&self, s: u64) -> Result<f64, AbsorbError> {
        self.means
            .get(s as usize)
            .copied()
            .ok_or(AbsorbError::OutOfTable(s))
    }

    pub fn max_pruned(&self) -> f64 {
        self.laws.iter().map(|l| l.pruned).fold(0.0, f64::max)
    }
}

/// `q_s(t) = sum_d p_d q_{s-d}(t-1)`; a self-loop `p_0 > 0` is solved as
/// `q_s(t) = p_0 q_s(t-1) + R(t)` with `R` the contribution of `d >= 1`.
fn dp_step(p: &[f64], laws: &[DenseLaw], tau: f64) -> DenseLaw {
    let s = p.len() - 1;
    let mut lo = u64::MAX;
    let mut hi = 0;
    for d in 1..=s {
        if p[d] > 0.0 {
            let q = &laws[s - d];
            lo = lo.min(q.lo + 1);
            hi = hi.max(q.hi() + 1);
        }
    }
    let mut r = vec![0.0; (hi - lo + 1) as usize];
    let mut comp = vec![0.0; r.len()];
    let mut pruned_in = CompensatedSum::new();
    for d in 1..=s {
        let w = p[d];
        if w > 0.0 {
            let q = &laws[s - d];
            let off = (q.lo + 1 - lo) as usize;
            let len = q.probs.len();
            for ((x, c), &y) in r[off..off + len]
                .iter_mut()
                .zip(&mut comp[off..off + len])
                .zip(&q.probs)
            {
                // two-sum of the running value and the new term
                let t = w * y;
                let sum = *x + t;
                let back = sum - *x;
                *c += (*x - (sum - back)) + (t - back);
                *x = sum;
            }
            pruned_in.add(w * q.pruned);
        }
    }
    r.iter_mut().zip(&comp).for_each(|(x, c)| *x += c);
    let p0 = p[0];
    let mut law = if p0 > 0.0 {
        let scale = 1.0 / (1.0 - p0);
        let mut q = Vec::with_capacity(r.len() + 16);
        let mut prev = 0.0;
        for &x in &r {
            prev = p0 * prev + x;
            q.push(prev);
        }
        // beyond R the law decays geometrically; the dropped tail is exact
        let mut tail = prev * p0 / (1.0 - p0);
        while tail > (0.5 * tau).max(f64::MIN_POSITIVE) {
            prev *= p0;
            q.push(prev);
            tail = prev * p0 / (1.0 - p0);
        }
        DenseLaw {
            lo,
            probs: q,
            pruned: pruned_in.value() * scale + tail,
        }
    } else {
        DenseLaw {
            lo,
            probs: r,
            pruned: pruned_in.value(),
        }
    };
    // the geometric tail already used half of the state's threshold
    law.prune_tails(if p0 > 0.0 { 0.5 * tau } else { tau });
    law
}

fn mean_step(p: &[f64], means: &[f64]) -> f64 {
    let s = p.len() - 1;
    let mut acc = CompensatedSum::new();
    acc.add(1.0);
    for d in 1..=s {
        if p[d] > 0.0 {
            acc.add(p[d] * means[s - d]);
        }
    }
    acc.value() / (1.0 - p[0])
}

/// Law of `T_s` with the total prune budget `budget`.
pub fn absorption_law(
    model: &DecrementModel,
    s: u64,
    budget: f64,
) -> Result<LatticeDist, AbsorbError> {
    AbsorptionTable::build(model, s, budget)?.lattice(s)
}

/// `m_s = (1 + sum_{d >= 1} p_d m_{s-d}) / (1 - p_0)`, `m_0 = 0`, without
/// storing laws.
pub fn absorption_mean(model: &DecrementModel, s: u64) -> Result<f64, AbsorbError> {
    let mut means = Vec::with_capacity(s as usize + 1);
    means.push(0.0);
    for k in 1..=s {
        let p = model.decrement_probs(k)?;
        means.push(mean_step(&p, &means));
    }
    Ok(means[s as usize])
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EtaLaw, IntStep};
    use proptest::prelude::*;

    fn all_models() -> Vec<DecrementModel> {
        vec![
            DecrementModel::simple_chain(),
            DecrementModel::beta_coalescent(1.0, 1.0).unwrap(),
            DecrementModel::beta_coalescent(0.5, 1.0).unwrap(),
            DecrementModel::bernoulli_sieve(EtaLaw::uniform()).unwrap(),
            DecrementModel::bernoulli_sieve(EtaLaw::Beta {
                alpha: 0.4,
                beta: 2.0,
            })
            .unwrap(),
            DecrementModel::barrier_walk(IntStep::uniform(1, 3)).unwrap(),
            DecrementModel::barrier_zero_jumps(0.5).unwrap(),
            DecrementModel::renewal(IntStep::pareto(1.5)).unwrap(),
        ]
    }

    #[test]
    fn zero_state_is_point_mass() {
        for m in all_models() {
            let law = absorption_law(&m, 0, 0.0).unwrap();
            assert_eq!(law.atoms(), &[0.0]);
        }
    }

    #[test]
    fn simple_chain_is_uniform() {
        let law = absorption_law(&DecrementModel::simple_chain(), 5, default_budget(5)).unwrap();
        assert_eq!(law.atoms(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        for &m in law.masses() {
            assert!((m - 0.2).abs() < 1e-15);
        }
        assert!((absorption_mean(&DecrementModel::simple_chain(), 5).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn unit_decrements_take_n_steps() {
        let m = DecrementModel::barrier_walk(IntStep::uniform(1, 1)).unwrap();
        let law = absorption_law(&m, 40, default_budget(40)).unwrap();
        assert_eq!(law.atoms(), &[40.0]);
        assert_eq!(absorption_mean(&m, 40).unwrap(), 40.0);
    }

    #[test]
    fn dp_matches_path_enumeration() {
        for m in all_models() {
            let table = AbsorptionTable::build(&m, 10, 0.0).unwrap();
            for s in 1..=10 {
                let oracle = brute::path_law(&m, s, 200);
                let law = table.law(s).unwrap();
                let keys: Vec<u64> = oracle.keys().copied().chain(law.lo..=law.hi()).collect();
                for k in keys {
                    let want = oracle.get(&k).copied().unwrap_or(0.0);
                    assert!(
                        (law.pmf(k) - want).abs() < 1e-12,
                        "{} s={s} k={k}: {} vs {want}",
                        m.name(),
                        law.pmf(k)
                    );
                }
            }
        }
    }

    #[test]
    fn support_bounds() {
        for m in all_models().into_iter().filter(|m| !m.allows_stay()) {
            let t = AbsorptionTable::build(&m, 60, default_budget(60)).unwrap();
            for s in 1..=60 {
                assert!(t.law(s).unwrap().hi() <= s, "{} s={s}", m.name());
            }
        }
        let m = DecrementModel::barrier_walk(IntStep::uniform(1, 3)).unwrap();
        let t = AbsorptionTable::build(&m, 60, 0.0).unwrap();
        for s in 1..=60u64 {
            assert!(t.law(s).unwrap().lo >= s.div_ceil(3));
        }
    }

    #[test]
    fn means_agree_and_increase() {
        for m in all_models() {
            let n = 300;
            let budget = default_budget(n);
            let t = AbsorptionTable::build(&m, n, budget).unwrap();
            let rec = absorption_mean(&m, n).unwrap();
            assert_eq!(rec, t.mean(n).unwrap());
            for s in 1..=n {
                let law = t.law(s).unwrap();
                let diff = (law.mean() - t.mean(s).unwrap()).abs();
                // pruned mass sits within the support span, plus the geometric tails
                let span = if m.allows_stay() {
                    4.0 * t.mean(s).unwrap() + 50.0
                } else {
                    s as f64
                };
                assert!(
                    diff <= law.pruned * span + 1e-11 * t.mean(s).unwrap(),
                    "{} s={s}: {diff}",
                    m.name()
                );
                assert!(
                    t.mean(s).unwrap() >= t.mean(s - 1).unwrap() - 1e-12,
                    "{} s={s}",
                    m.name()
                );
            }
        }
    }

    #[test]
    fn mean_monotone_to_a_thousand() {
        for m in all_models() {
            let mut prev = 0.0;
            let mut means = vec![0.0];
            for s in 1..=1000u64 {
                let p = m.decrement_probs(s).unwrap();
                let v = mean_step(&p, &means);
                assert!(v >= prev - 1e-12, "{} s={s}", m.name());
                means.push(v);
                prev = v;
            }
        }
    }

    #[test]
    fn pruning_respects_budget() {
        let m = DecrementModel::beta_coalescent(0.5, 1.0).unwrap();
        let budget = 1e-6;
        let t = AbsorptionTable::build(&m, 400, budget).unwrap();
        assert!(t.max_pruned() <= budget);
        assert!(t.max_pruned() > 0.0);
        let full = AbsorptionTable::build(&m, 400, 0.0).unwrap();
        let a = t.law(400).unwrap();
        let b = full.law(400).unwrap();
        let diff: f64 = (b.lo..=b.hi()).map(|k| (a.pmf(k) - b.pmf(k)).abs()).sum();
        assert!(diff <= 2.0 * budget);
        assert!(matches!(
            AbsorptionTable::build(&m, 5, 1.5),
            Err(AbsorbError::BadBudget(_))
        ));
    }

    #[test]
    fn self_loop_tail_is_accounted() {
        let m = DecrementModel::barrier_zero_jumps(0.3).unwrap();
        let budget = 1e-9;
        let t = AbsorptionTable::build(&m, 50, budget).unwrap();
        for s in 0..=50 {
            let law = t.law(s).unwrap();
            let total: f64 = law.probs.iter().sum::<f64>() + law.pruned;
            assert!((total - 1.0).abs() < 1e-13, "s={s}: {total}");
            assert!(law.pruned <= budget);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_barrier_laws_match_paths(w in proptest::collection::vec(0.05f64..1.0, 1..5), s in 1u64..9) {
            let total: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
            let dist = LatticeDist::from_int_pmf(1, &probs, 0.0).unwrap();
            let m = DecrementModel::barrier_walk(IntStep::Table { dist }).unwrap();
            let t = AbsorptionTable::build(&m, s, 0.0).unwrap();
            let oracle = brute::path_law(&m, s, 0);
            for (&k, &want) in &oracle {
                prop_assert!((t.law(s).unwrap().pmf(k) - want).abs() < 1e-12);
            }
        }
    }
}
