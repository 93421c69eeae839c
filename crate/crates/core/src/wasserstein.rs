//! Minimal L^p distances (p = 1, 2) on the real line through the quantile
//! coupling.
//!
//! Pruned mass of a [`StepLaw`] is treated as if it sat on the largest
//! retained atom; the resulting uncertainty is added to `error_bound`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::StepLaw;
use crate::limits::{ContinuousLaw, LimitError};
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QuantileExact,
    CdfArea,
    QuantileQuadrature,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    pub p: u8,
    pub method: Method,
    pub error_bound: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DistanceError {
    #[error("exponent p = {0} is not supported (1 or 2)")]
    BadExponent(u8),
    #[error("limit law has infinite second moment; d2 is undefined")]
    InfiniteSecondMoment,
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("law has no atoms")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error(transparent)]
    Limit(#[from] LimitError),
}

fn check_p(p: u8) -> Result<(), DistanceError> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(DistanceError::BadExponent(p))
    }
}

/// Level up to which atom `i` carries the quantile, lumping pruned mass on the last atom.
fn level<F: StepLaw + ?Sized>(f: &F, i: usize) -> f64 {
    if i + 1 == f.len() {
        1.0
    } else {
        f.cum(i).min(1.0)
    }
}

/// Exact `d_p` between two discrete laws by sweeping merged CDF breakpoints.
pub fn dp_discrete<F: StepLaw + ?Sized, G: StepLaw + ?Sized>(
    f: &F,
    g: &G,
    p: u8,
) -> Result<DistanceReport, DistanceError> {
    check_p(p)?;
    if f.is_empty() || g.is_empty() {
        return Err(DistanceError::Empty);
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0_f64;
    let mut acc = CompensatedSum::new();
    loop {
        let (ui, uj) = (level(f, i), level(g, j));
        let next = ui.min(uj);
        if next > u {
            let d = (f.atom(i) - g.atom(j)).abs();
            acc.add((next - u) * if p == 1 { d } else { d * d });
            u = next;
        }
        if i + 1 == f.len() && j + 1 == g.len() {
            break;
        }
        if ui <= uj && i + 1 < f.len() {
            i += 1;
        } else if j + 1 < g.len() {
            j += 1;
        } else {
            i += 1;
        }
    }
    let lo = f.min_atom().min(g.min_atom());
    let hi = f.max_atom().max(g.max_atom());
    let diam = hi - lo;
    let pruned = f.pruned_mass() + g.pruned_mass();
    let terms = (f.len() + g.len()) as f64;
    let raw = acc.value().max(0.0);
    let (value, error_bound) = if p == 1 {
        (raw, 4.0 * f64::EPSILON * terms * diam + pruned * diam)
    } else {
        let v = raw.sqrt();
        let sq_err = 4.0 * f64::EPSILON * terms * diam * diam + pruned * diam * diam;
        (
            v,
            sq_err
                .sqrt()
                .min(if v > 0.0 { sq_err / v } else { f64::INFINITY }),
        )
    };
    Ok(DistanceReport {
        value,
        p,
        method: Method::QuantileExact,
        error_bound,
    })
}

/// `d_1 = integral |F - G|` with `F` discrete, evaluated piecewise between
/// atoms through the antiderivative of `G`.
pub fn d1_discrete_vs_continuous<F: StepLaw + ?Sized, G: ContinuousLaw + ?Sized>(
    f: &F,
    g: &G,
) -> Result<DistanceReport, DistanceError> {
    if f.is_empty() {
        return Err(DistanceError::Empty);
    }
    let k = f.len();
    let mut acc = CompensatedSum::new();
    acc.add(g.lower_partial(f.atom(0))?);
    let mut l_prev = g.lower_partial(f.atom(0))?;
    for i in 0..k - 1 {
        let (x0, x1) = (f.atom(i), f.atom(i + 1));
        let c = f.cum(i).clamp(0.0, 1.0);
        let l1 = g.lower_partial(x1)?;
        let area_g = l1 - l_prev;
        let piece = if c <= 0.0 {
            area_g
        } else if c >= 1.0 {
            (x1 - x0) - area_g
        } else {
            let q = g.quantile(c)?;
            if q <= x0 {
                area_g - c * (x1 - x0)
            } else if q >= x1 {
                c * (x1 - x0) - area_g
            } else {
                let lq = g.lower_partial(q)?;
                (c * (q - x0) - (lq - l_prev)) + ((l1 - lq) - c * (x1 - q))
            }
        };
        acc.add(piece.max(0.0));
        l_prev = l1;
    }
    acc.add(g.upper_partial(f.atom(k - 1))?);
    let span = f.max_atom() - f.min_atom();
    let eps = g.antiderivative_tolerance();
    let scale = f.max_atom().abs().max(f.min_atom().abs()).max(1.0);
    let error_bound =
        eps * (span + 4.0) + 8.0 * f64::EPSILON * k as f64 * scale + f.pruned_mass() * (span + 1.0);
    Ok(DistanceReport {
        value: acc.value().max(0.0),
        p: 1,
        method: Method::CdfArea,
        error_bound,
    })
}

/// `d_p` as `sum_i integral over {G^-1 in (q_{i-1}, q_i]} |x_i - y|^p dG(y)`,
/// with `q_i = G^-1(F(x_i))`, by adaptive quadrature against the density.
pub fn dp_quantile_quadrature<F: StepLaw + ?Sized, G: ContinuousLaw + ?Sized>(
    f: &F,
    g: &G,
    p: u8,
) -> Result<DistanceReport, DistanceError> {
    check_p(p)?;
    if f.is_empty() {
        return Err(DistanceError::Empty);
    }
    if p == 2 && !g.has_finite_variance() {
        return Err(DistanceError::InfiniteSecondMoment);
    }
    let k = f.len();
    let mut acc = CompensatedSum::new();
    let mut err = 0.0;
    let mut q_prev = f64::NEG_INFINITY;
    for i in 0..k {
        let u = level(f, i);
        let q = if u >= 1.0 {
            f64::INFINITY
        } else {
            g.quantile(u)?
        };
        if q > q_prev {
            let (v, e) = g.partial_moment(q_prev, q, f.atom(i), p as i32)?;
            acc.add(v);
            err += e;
        }
        q_prev = q;
    }
    let span = f.max_atom() - f.min_atom() + 1.0;
    let pruned = f.pruned_mass() * span.powi(p as i32);
    let eps = g.antiderivative_tolerance() * span.powi(p as i32) * 4.0;
    let raw = acc.value().max(0.0);
    let total_err = err + pruned + eps;
    let (value, error_bound) = if p == 1 {
        (raw, total_err)
    } else {
        let v = raw.sqrt();
        (
            v,
            total_err.sqrt().min(if v > 0.0 {
                total_err / v
            } else {
                f64::INFINITY
            }),
        )
    };
    Ok(DistanceReport {
        value,
        p,
        method: Method::QuantileQuadrature,
        error_bound,
    })
}

/// `d_2` between a discrete law and a limit law with finite variance.
pub fn d2_discrete_vs_continuous<F: StepLaw + ?Sized, G: ContinuousLaw + ?Sized>(
    f: &F,
    g: &G,
) -> Result<DistanceReport, DistanceError> {
    dp_quantile_quadrature(f, g, 2)
}

/// `d_p` between a discrete law and a limit law: the CDF-area route for
/// `p = 1`, quantile quadrature for `p = 2`.
pub fn dp_discrete_vs_continuous<F: StepLaw + ?Sized, G: ContinuousLaw + ?Sized>(
    f: &F,
    g: &G,
    p: u8,
) -> Result<DistanceReport, DistanceError> {
    match p {
        1 => d1_discrete_vs_continuous(f, g),
        2 => d2_discrete_vs_continuous(f, g),
        _ => Err(DistanceError::BadExponent(p)),
    }
}

pub const MIN_EMPIRICAL_SAMPLES: usize = 100;

/// Midpoint plotting positions `G^-1((i - 1/2) / m)`.
pub fn plotting_quantiles<G: ContinuousLaw + ?Sized>(
    g: &G,
    m: usize,
) -> Result<Vec<f64>, DistanceError> {
    (0..m)
        .map(|i| g.quantile((i as f64 + 0.5) / m as f64).map_err(Into::into))
        .collect()
}

/// Empirical estimate against precomputed plotting quantiles; `sorted` must be ascending.
pub fn dp_empirical_with_quantiles(
    sorted: &[f64],
    quantiles: &[f64],
    p: u8,
) -> Result<DistanceReport, DistanceError> {
    check_p(p)?;
    let m = sorted.len();
    if m < MIN_EMPIRICAL_SAMPLES {
        return Err(DistanceError::TooFewSamples {
            got: m,
            min: MIN_EMPIRICAL_SAMPLES,
        });
    }
    assert_eq!(m, quantiles.len(), "one plotting quantile per sample");
    let mut sum = CompensatedSum::new();
    let mut sum_sq = CompensatedSum::new();
    for (&x, &q) in sorted.iter().zip(quantiles) {
        let d = (x - q).abs();
        let t = if p == 1 { d } else { d * d };
        sum.add(t);
        sum_sq.add(t * t);
    }
    let mf = m as f64;
    let mean = sum.value() / mf;
    let var = (sum_sq.value() / mf - mean * mean).max(0.0);
    let se = (var / mf).sqrt();
    let (value, error_bound) = if p == 1 {
        (mean, se)
    } else {
        let v = mean.sqrt();
        (v, if v > 0.0 { se / (2.0 * v) } else { se.sqrt() })
    };
    Ok(DistanceReport {
        value,
        p,
        method: Method::Empirical,
        error_bound,
    })
}

/// `((1/m) sum |x_(i) - G^-1((i - 1/2)/m)|^p)^(1/p)`.
pub fn dp_empirical<G: ContinuousLaw + ?Sized>(
    samples: &[f64],
    g: &G,
    p: u8,
) -> Result<DistanceReport, DistanceError> {
    check_p(p)?;
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(DistanceError::NonFiniteSample);
    }
    if samples.len() < MIN_EMPIRICAL_SAMPLES {
        return Err(DistanceError::TooFewSamples {
            got: samples.len(),
            min: MIN_EMPIRICAL_SAMPLES,
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = plotting_quantiles(g, sorted.len())?;
    dp_empirical_with_quantiles(&sorted, &q, p)
}

/// Delete-a-group jackknife standard error of [`dp_empirical`]. Groups are
/// contiguous blocks of `samples` in their given (random) order.
pub fn jackknife_empirical<G: ContinuousLaw + ?Sized>(
    samples: &[f64],
    g: &G,
    p: u8,
    groups: usize,
) -> Result<(DistanceReport, f64), DistanceError> {
    let full = dp_empirical(samples, g, p)?;
    let m = samples.len();
    let groups = groups.clamp(2, m);
    let size = m / groups;
    let kept = m - size;
    let q = plotting_quantiles(g, kept)?;
    let mut estimates = Vec::with_capacity(groups);
    let mut buf = Vec::with_capacity(kept);
    for gi in 0..groups {
        let (lo, hi) = (gi * size, gi * size + size);
        buf.clear();
        buf.extend_from_slice(&samples[..lo]);
        buf.extend_from_slice(&samples[hi..]);
        buf.truncate(kept);
        buf.sort_by(f64::total_cmp);
        estimates.push(dp_empirical_with_quantiles(&buf, &q, p)?.value);
    }
    let gf = groups as f64;
    let mean = estimates.iter().sum::<f64>() / gf;
    let var = (gf - 1.0) / gf * estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>();
    Ok((full, var.sqrt()))
}

/// Kantorovich–Rubinstein dual evaluation, used as an independent check of
/// the primal sweep.
pub mod oracle {
    use crate::dist::StepLaw;

    pub const MAX_ATOMS: usize = 50;

    fn merged_grid<F: StepLaw + ?Sized, G: StepLaw + ?Sized>(f: &F, g: &G) -> (Vec<f64>, Vec<f64>) {
        let mut pts: Vec<(f64, f64)> = (0..f.len())
            .map(|i| (f.atom(i), f.mass(i)))
            .chain((0..g.len()).map(|j| (g.atom(j), -g.mass(j))))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut grid: Vec<f64> = Vec::new();
        let mut w: Vec<f64> = Vec::new();
        for (x, m) in pts {
            if grid.last() == Some(&x) {
                *w.last_mut().expect("parallel") += m;
            } else {
                grid.push(x);
                w.push(m);
            }
        }
        (grid, w)
    }

    /// The 1-Lipschitz test function maximizing `E_f h - E_g h`, given by
    /// its values on the merged atom grid.
    pub fn optimal_test_function<F: StepLaw + ?Sized, G: StepLaw + ?Sized>(
        f: &F,
        g: &G,
    ) -> (Vec<f64>, Vec<f64>) {
        let (grid, w) = merged_grid(f, g);
        let k = grid.len();
        // Tail sums W_j = sum_{i > j} w_i decide each slope's sign.
        let mut tail = vec![0.0; k];
        for j in (0..k.saturating_sub(1)).rev() {
            tail[j] = tail[j + 1] + w[j + 1];
        }
        let mut h = vec![0.0; k];
        for j in 1..k {
            let slope = if tail[j - 1] >= 0.0 { 1.0 } else { -1.0 };
            h[j] = h[j - 1] + slope * (grid[j] - grid[j - 1]);
        }
        (grid, h)
    }

    /// `sup { E_f h - E_g h : h 1-Lipschitz }`.
    pub fn kr_dual_oracle<F: StepLaw + ?Sized, G: StepLaw + ?Sized>(f: &F, g: &G) -> f64 {
        assert!(
            f.len() + g.len() <= 2 * MAX_ATOMS,
            "oracle is meant for small instances"
        );
        let (grid, h) = optimal_test_function(f, g);
        let eval = |x: f64| h[grid.partition_point(|&z| z < x)];
        let ef: f64 = (0..f.len()).map(|i| f.mass(i) * eval(f.atom(i))).sum();
        let eg: f64 = (0..g.len()).map(|j| g.mass(j) * eval(g.atom(j))).sum();
        ef - eg
    }

    /// Exhaustive search over the vertices `h_{j+1} - h_j = +-(z_{j+1} - z_j)`
    /// of the Lipschitz polytope; exponential, for cross-checks on tiny grids.
    pub fn kr_dual_brute_force<F: StepLaw + ?Sized, G: StepLaw + ?Sized>(f: &F, g: &G) -> f64 {
        let (grid, w) = merged_grid(f, g);
        let k = grid.len();
        assert!(k <= 16, "brute force limited to 16 grid points");
        if k < 2 {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << (k - 1)) {
            let mut h = 0.0;
            let mut val = 0.0;
            for i in 0..k {
                if i > 0 {
                    let s = if mask & (1 << (i - 1)) != 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    h += s * (grid[i] - grid[i - 1]);
                }
                val += w[i] * h;
            }
            best = best.max(val);
        }
        best
    }
}
