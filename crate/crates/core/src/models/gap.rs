//! Distance between the decrement law at a state and its limiting step law.

use serde::Serialize;

use super::{DecrementModel, ModelError, RegimeLimits};
use crate::dist::{truncate_at, LatticeDist};
use crate::wasserstein::{d1_discrete_vs_continuous, dp_discrete, dp_quantile_quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub value: f64,
    pub p: u8,
    pub error_bound: f64,
    /// Mass of full absorption, placed at `-log n` in the multiplicative case.
    pub absorbed_mass: f64,
}

/// Additive models: `d_p(I_n, xi ∧ n)`. Multiplicative models:
/// `d_p(log(1 - I_n/n), log eta)` with `n` the model's own state label.
pub fn coupling_gap(model: &DecrementModel, n: u64, p: u8) -> Result<GapReport, ModelError> {
    let probs = model.decrement_probs(n)?;
    match model.limits() {
        RegimeLimits::Add(l) => {
            let dec = LatticeDist::from_int_pmf(0, &probs, 0.0)?;
            let xi = truncate_at(&l.xi.truncated(n), n as f64);
            let r = dp_discrete(&dec, &xi, p)?;
            Ok(GapReport {
                value: r.value,
                p,
                error_bound: r.error_bound,
                absorbed_mass: 0.0,
            })
        }
        RegimeLimits::Mult(l) => {
            let big_n = (n + model.offset()) as f64;
            let mut absorbed = 0.0;
            let pairs = probs
                .iter()
                .enumerate()
                .filter(|(_, &q)| q > 0.0)
                .map(|(d, &q)| {
                    let next = (n - d as u64 + model.offset()) as f64;
                    if next == 0.0 {
                        absorbed += q;
                        (-big_n.ln(), q)
                    } else {
                        ((next / big_n).ln(), q)
                    }
                });
            let law = LatticeDist::from_pairs(pairs.collect::<Vec<_>>(), 0.0)?;
            let r = match l.eta.log_law() {
                Some(g) if p == 1 => d1_discrete_vs_continuous(&law, &g)?,
                Some(g) => dp_quantile_quadrature(&law, &g, p)?,
                None => dp_discrete(&law, &LatticeDist::point(l.eta.mean().ln()), p)?,
            };
            Ok(GapReport {
                value: r.value,
                p,
                error_bound: r.error_bound,
                absorbed_mass: absorbed,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limits::ContinuousLaw;
    use crate::models::{EtaLaw, IntStep};
    use crate::numeric::{integrate, integrate_lower_tail};

    #[test]
    fn barrier_gap_vanishes_beyond_support() {
        let m = DecrementModel::barrier_walk(IntStep::uniform(1, 3)).unwrap();
        for n in 3..60 {
            for p in [1, 2] {
                assert_eq!(coupling_gap(&m, n, p).unwrap().value, 0.0);
            }
        }
        assert!(coupling_gap(&m, 2, 1).unwrap().value > 0.0);
    }

    #[test]
    fn simple_chain_gap_is_one_minus_one_over_n() {
        let m = DecrementModel::simple_chain();
        for n in [2u64, 5, 100, 10_000] {
            let g = coupling_gap(&m, n, 1).unwrap();
            let want = (n - 1) as f64 / n as f64;
            assert!((g.value - want).abs() < 1e-12, "n={n}: {}", g.value);
        }
    }

    #[test]
    fn sieve_gap_matches_brute_quadrature() {
        let m = DecrementModel::bernoulli_sieve(EtaLaw::uniform()).unwrap();
        let g = coupling_gap(&m, 3, 1).unwrap();
        // atoms log(2/3), log(1/3), and the absorbed atom at -log 3, each 1/3
        let f = |x: f64| {
            let atoms = [-(3f64.ln()), -(3f64.ln()), (2.0f64 / 3.0).ln()];
            atoms.iter().filter(|&&a| a <= x).count() as f64 / 3.0
        };
        let g_cdf = |x: f64| if x < 0.0 { x.exp() } else { 1.0 };
        let k = [-(3f64.ln()), (2.0f64 / 3.0).ln()];
        let left = integrate_lower_tail(|x| (f(x) - g_cdf(x)).abs(), k[0], 1e-14, 1e-13)
            .unwrap()
            .value;
        let mid = integrate(|x| (f(x) - g_cdf(x)).abs(), k[0], k[1], 1e-14, 1e-13)
            .unwrap()
            .value;
        let right = integrate(|x| (f(x) - g_cdf(x)).abs(), k[1], 0.0, 1e-14, 1e-13)
            .unwrap()
            .value;
        assert!(
            (g.value - (left + mid + right)).abs() < 1e-10,
            "{} vs {}",
            g.value,
            left + mid + right
        );
        assert!((g.absorbed_mass - 1.0 / 3.0).abs() < 1e-15);
        let law = EtaLaw::uniform().log_law().unwrap();
        assert!(law.has_finite_variance());
    }

    #[test]
    fn sieve_gap_p2_dominates_p1() {
        let m = DecrementModel::bernoulli_sieve(EtaLaw::Beta {
            alpha: 2.0,
            beta: 1.5,
        })
        .unwrap();
        for n in [5u64, 50, 500] {
            let g1 = coupling_gap(&m, n, 1).unwrap().value;
            let g2 = coupling_gap(&m, n, 2).unwrap().value;
            assert!(g2 + 1e-9 >= g1, "n={n}: {g2} < {g1}");
        }
    }

    #[test]
    fn point_factor_uses_discrete_route() {
        let m = DecrementModel::bernoulli_sieve(EtaLaw::Point { w: 0.5 }).unwrap();
        let g = coupling_gap(&m, 1, 1).unwrap();
        // the only move is full absorption, placed at -log 1 = 0, vs log 0.5
        assert!((g.value - 0.5f64.ln().abs()).abs() < 1e-15);
        assert_eq!(g.absorbed_mass, 1.0);
    }

    #[test]
    fn coalescent_gap_decreases() {
        let m = DecrementModel::beta_coalescent(0.5, 1.0).unwrap();
        let g: Vec<f64> = [50u64, 200, 800]
            .iter()
            .map(|&n| coupling_gap(&m, n, 1).unwrap().value)
            .collect();
        assert!(g[0] > g[1] && g[1] > g[2], "{g:?}");
    }
}
