//! Integer step laws on `{1, 2, ...}` used as `xi` (additive limits) and as
//! the increment `zeta` of barrier walks.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dist::{LatticeDist, StepLaw};
use crate::limits::TailSpec;
use crate::numeric::special::{digamma, ln_gamma, trigamma, zeta};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntStep {
    /// Arbitrary finite law on positive integers.
    Table { dist: LatticeDist },
    /// Uniform on `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// `P(xi >= k) = k^-alpha` for `k >= 1`.
    DiscretePareto { alpha: f64 },
    /// `P(xi = k) = (2-a) Gamma(k+a-1) / (Gamma(a) (k+1)!)`.
    CoalescentLimit { a: f64 },
}

impl IntStep {
    pub fn uniform(lo: u64, hi: u64) -> Self {
        IntStep::Uniform { lo, hi }
    }

    pub fn pareto(alpha: f64) -> Self {
        IntStep::DiscretePareto { alpha }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            IntStep::Table { dist } => {
                if !dist.is_integer_valued() || dist.min_atom() < 1.0 {
                    return Err(ModelError::invalid(
                        "step table must live on positive integers",
                    ));
                }
                if dist.pruned_mass() > 0.0 {
                    return Err(ModelError::invalid("step table must not carry pruned mass"));
                }
            }
            IntStep::Uniform { lo, hi } => {
                if *lo < 1 || lo > hi {
                    return Err(ModelError::invalid(format!(
                        "uniform step needs 1 <= lo <= hi, got {lo}..={hi}"
                    )));
                }
            }
            IntStep::DiscretePareto { alpha } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(ModelError::invalid(format!(
                        "pareto index must be positive, got {alpha}"
                    )));
                }
            }
            IntStep::CoalescentLimit { a } => {
                if !(*a > 0.0 && *a <= 1.0) {
                    return Err(ModelError::invalid(format!(
                        "coalescent parameter a must be in (0, 1], got {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match self {
            IntStep::Table { dist } => dist.pmf_at(k as f64),
            IntStep::Uniform { lo, hi } => {
                if (*lo..=*hi).contains(&k) {
                    1.0 / (hi - lo + 1) as f64
                } else {
                    0.0
                }
            }
            IntStep::DiscretePareto { alpha } => {
                let k = k as f64;
                // k^-a - (k+1)^-a without cancellation
                k.powf(-alpha) * -(-alpha * (1.0 / k).ln_1p()).exp_m1()
            }
            IntStep::CoalescentLimit { a } => {
                let k = k as f64;
                ((2.0 - a).ln() + ln_gamma(k + a - 1.0) - ln_gamma(*a) - ln_gamma(k + 2.0)).exp()
            }
        }
    }

    /// `P(xi > k)`.
    pub fn sf(&self, k: u64) -> f64 {
        match self {
            IntStep::Table { dist } => (1.0 - dist.cdf(k as f64)).max(0.0),
            IntStep::Uniform { lo, hi } => {
                if k < *lo {
                    1.0
                } else if k >= *hi {
                    0.0
                } else {
                    (hi - k) as f64 / (hi - lo + 1) as f64
                }
            }
            IntStep::DiscretePareto { alpha } => (k as f64 + 1.0).powf(-alpha),
            IntStep::CoalescentLimit { a } => coalescent_sf(*a, k as f64),
        }
    }

    /// `P(xi = k)` for `k = 0..=n` (entry 0 is zero).
    pub fn pmf_upto(&self, n: u64) -> Vec<f64> {
        let len = n as usize + 1;
        match self {
            IntStep::CoalescentLimit { a } => {
                let mut p = vec![0.0; len];
                if len > 1 {
                    p[1] = (2.0 - a) / 2.0;
                }
                for k in 1..len.saturating_sub(1) {
                    let kf = k as f64;
                    p[k + 1] = p[k] * (kf + a - 1.0) / (kf + 2.0);
                }
                p
            }
            _ => (0..len as u64).map(|k| self.pmf(k)).collect(),
        }
    }

    /// Exact law of `xi ∧ n`.
    pub fn truncated(&self, n: u64) -> LatticeDist {
        assert!(n >= 1, "truncation level must be at least 1");
        let mut p = self.pmf_upto(n);
        p[n as usize] = self.sf(n - 1);
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        LatticeDist::from_int_pmf(0, &p, 0.0).expect("truncated step law is valid")
    }

    /// Law of `xi` given `xi <= n`; `None` when that event is null.
    pub fn conditioned_at_most(&self, n: u64) -> Option<Vec<f64>> {
        let mut p = self.pmf_upto(n);
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        p.iter_mut().for_each(|x| *x /= total);
        Some(p)
    }

    pub fn mean(&self) -> f64 {
        match self {
            IntStep::Table { dist } => dist.mean(),
            IntStep::Uniform { lo, hi } => (lo + hi) as f64 / 2.0,
            IntStep::DiscretePareto { alpha } => {
                if *alpha > 1.0 {
                    zeta(*alpha)
                } else {
                    f64::INFINITY
                }
            }
            IntStep::CoalescentLimit { a } => {
                if *a < 1.0 {
                    1.0 / (1.0 - a)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            IntStep::Table { dist } => dist.variance(),
            IntStep::Uniform { lo, hi } => {
                let w = (hi - lo + 1) as f64;
                (w * w - 1.0) / 12.0
            }
            IntStep::DiscretePareto { alpha } => {
                if *alpha > 2.0 {
                    // E xi^2 = sum (2k - 1) k^-alpha
                    let m = zeta(*alpha);
                    2.0 * zeta(alpha - 1.0) - m - m * m
                } else {
                    f64::INFINITY
                }
            }
            IntStep::CoalescentLimit { .. } => f64::INFINITY,
        }
    }

    /// Regular-variation data for the heavy-tailed clauses.
    pub fn tail(&self) -> Option<TailSpec> {
        match self {
            IntStep::DiscretePareto { alpha } if *alpha < 2.0 => {
                Some(TailSpec::pure_pareto(*alpha))
            }
            IntStep::DiscretePareto { alpha } if *alpha == 2.0 => Some(
                TailSpec::truncated_second_moment(pareto2_truncated_second_moment),
            ),
            IntStep::CoalescentLimit { a } if *a < 1.0 => {
                let a = *a;
                Some(TailSpec::from_survival(2.0 - a, move |t: f64| {
                    coalescent_sf(a, t.max(0.0))
                }))
            }
            _ => None,
        }
    }

    pub fn max_atom(&self) -> Option<u64> {
        match self {
            IntStep::Table { dist } => Some(dist.max_atom() as u64),
            IntStep::Uniform { hi, .. } => Some(*hi),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            IntStep::Table { dist } => {
                let u: f64 = rng.random::<f64>() * dist.total_mass();
                let i = (0..dist.len())
                    .position(|i| dist.cum(i) > u)
                    .unwrap_or(dist.len() - 1);
                dist.atom(i) as u64
            }
            IntStep::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            IntStep::DiscretePareto { alpha } => sample_pareto(*alpha, rng),
            IntStep::CoalescentLimit { a } => sample_coalescent(*a, rng),
        }
    }
}

/// `Gamma(t + a) / (Gamma(a) Gamma(t + 2))`, the survival function of the
/// coalescent limit at integer `t` and its interpolation in between.
fn coalescent_sf(a: f64, t: f64) -> f64 {
    (ln_gamma(t + a) - ln_gamma(a) - ln_gamma(t + 2.0)).exp()
}

/// `E[xi^2 1{xi <= t}]` for `P(xi >= k) = k^-2`.
fn pareto2_truncated_second_moment(t: f64) -> f64 {
    if t < 1.0 {
        return 0.0;
    }
    // sum_{j=2}^{m} (2j - 1)/j^2 with m = floor(t) + 1
    let m = t.floor() + 1.0;
    let harmonic = digamma(m + 1.0) + EULER_GAMMA;
    let squares = PI * PI / 6.0 - trigamma(m + 1.0);
    2.0 * (harmonic - 1.0) - (squares - 1.0)
}

fn sample_pareto<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> u64 {
    let u = 1.0 - rng.random::<f64>();
    // xi = floor(U^(-1/alpha)); the first thresholds are checked directly.
    if u > 2f64.powf(-alpha) {
        return 1;
    }
    let x = u.powf(-1.0 / alpha).floor();
    if x >= 1.8e19 {
        u64::MAX / 4
    } else {
        x as u64
    }
}

fn sample_coalescent<R: Rng + ?Sized>(a: f64, rng: &mut R) -> u64 {
    // xi = min { k : P(xi > k) < U }
    let u = 1.0 - rng.random::<f64>();
    let mut sf = 1.0;
    for k in 1..=64u64 {
        let kf = k as f64;
        sf *= (kf - 1.0 + a) / (kf + 1.0);
        if sf < u {
            return k;
        }
    }
    let (mut lo, mut hi) = (64u64, 128u64);
    while coalescent_sf(a, hi as f64) >= u {
        lo = hi;
        if hi >= u64::MAX / 8 {
            return hi;
        }
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if coalescent_sf(a, mid as f64) < u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
