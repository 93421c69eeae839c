//! The normalizing function `c(t)` solving `t l(c) / c^alpha = 1`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::LimitError;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tail description of a step law: index `alpha` and slowly varying part `l`.
///
/// For `alpha = 2` the function `l` is the truncated second moment
/// `E[xi^2 1{xi <= t}]`; for `alpha < 2` it is `t^alpha P(xi > t)`.
#[derive(Clone)]
pub struct TailSpec {
    pub alpha: f64,
    ell: RealFn,
    survival: Option<RealFn>,
    label: String,
}

impl fmt::Debug for TailSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TailSpec")
            .field("alpha", &self.alpha)
            .field("label", &self.label)
            .finish()
    }
}

impl TailSpec {
    /// `P(xi > t) = t^-alpha` exactly, so `l` is identically one.
    pub fn pure_pareto(alpha: f64) -> Self {
        TailSpec {
            alpha,
            ell: Arc::new(|_| 1.0),
            survival: Some(Arc::new(move |t: f64| t.max(1.0).powf(-alpha))),
            label: format!("pareto(alpha={alpha})"),
        }
    }

    /// Tail known through its survival function `P(xi > t)`.
    pub fn from_survival(
        alpha: f64,
        survival: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let s: RealFn = Arc::new(survival);
        let s2 = s.clone();
        TailSpec {
            alpha,
            ell: Arc::new(move |t: f64| t.powf(alpha) * s2(t)),
            survival: Some(s),
            label: format!("survival(alpha={alpha})"),
        }
    }

    /// Clause with infinite variance and slowly varying truncated second moment.
    pub fn truncated_second_moment(m2: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TailSpec {
            alpha: 2.0,
            ell: Arc::new(m2),
            survival: None,
            label: "truncated-second-moment".into(),
        }
    }

    /// Arbitrary `l` with an optional survival function for the fallback route.
    pub fn custom(
        alpha: f64,
        ell: impl Fn(f64) -> f64 + Send + Sync + 'static,
        survival: Option<RealFn>,
        label: impl Into<String>,
    ) -> Self {
        TailSpec {
            alpha,
            ell: Arc::new(ell),
            survival,
            label: label.into(),
        }
    }

    pub fn ell(&self, t: f64) -> f64 {
        (self.ell)(t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizerRoute {
    Equation,
    GeneralizedInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizerValue {
    pub c: f64,
    pub route: NormalizerRoute,
    /// `|t l(c)/c^alpha - 1|` at the returned point (equation route).
    pub residual: f64,
}

const GRID: usize = 64;

/// Solves `t l(c) / c^alpha = 1` by bisection on `[1, t^(2/alpha) + t]`;
/// falls back to `inf { x : P(xi > x) <= 1/t }` when `l(c)/c^alpha` is not
/// monotone on the bracket.
pub fn normalizer_c(spec: &TailSpec, t: f64) -> Result<NormalizerValue, LimitError> {
    if !(t >= 1.0) || !t.is_finite() {
        return Err(LimitError::Invalid(format!("normalizer argument t = {t}")));
    }
    let alpha = spec.alpha;
    let lo = 1.0_f64;
    let hi = t.powf(2.0 / alpha) + t;
    let h = |c: f64| (spec.ell(c)).ln() - alpha * c.ln() + t.ln();

    // Grid values of h; the equation route bisects on the final stretch where
    // h is nonincreasing, which holds the largest root.
    let grid: Vec<(f64, f64)> = (0..=GRID)
        .map(|i| {
            let c = lo * (hi / lo).powf(i as f64 / GRID as f64);
            (c, h(c))
        })
        .collect();
    let mut start = GRID;
    while start > 0 {
        let (prev, cur) = (grid[start - 1].1, grid[start].1);
        if prev.is_finite() && prev >= cur {
            start -= 1;
        } else {
            break;
        }
    }
    let (c_start, h_start) = grid[start];
    if start < GRID && h_start >= 0.0 && grid[GRID].1 <= 0.0 {
        let c = bisect(|c| h(c) > 0.0, c_start, hi);
        let residual = (t * spec.ell(c) / c.powf(alpha) - 1.0).abs();
        return Ok(NormalizerValue {
            c,
            route: NormalizerRoute::Equation,
            residual,
        });
    }
    let Some(survival) = &spec.survival else {
        return Err(LimitError::NoRoot(format!(
            "{}: equation not monotone on [1, {hi}] and no survival function for the inverse",
            spec.label
        )));
    };
    let target = 1.0 / t;
    let mut upper = hi;
    while survival(upper) > target {
        upper *= 2.0;
        if !upper.is_finite() {
            return Err(LimitError::NoRoot(format!(
                "{}: survival never reaches 1/t",
                spec.label
            )));
        }
    }
    let c = bisect(|x| survival(x) > target, 0.0, upper);
    let residual = (t * spec.ell(c) / c.powf(alpha) - 1.0).abs();
    Ok(NormalizerValue {
        c,
        route: NormalizerRoute::GeneralizedInverse,
        residual,
    })
}

/// Smallest point (to relative 1e-15) where `below` switches from true to false.
fn bisect(below: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi.abs() {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
