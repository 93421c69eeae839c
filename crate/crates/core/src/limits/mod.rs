//! Continuous limit laws, the normalizing function `c(t)` and the
//! centering/scaling constants of the limit theorems.

mod normal;
mod normalization;
mod normalizer;
mod stable;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{integrate, integrate_lower_tail, integrate_upper_tail, QuadError};

pub use normal::{
    normal_cdf, normal_lower_partial, normal_mean_abs, normal_pdf, normal_quantile, normal_sf,
    normal_upper_partial,
};
pub use normalization::{theorem_normalization, Clause, Normalization};
pub use normalizer::{normalizer_c, NormalizerRoute, NormalizerValue, TailSpec};
pub use stable::{stable_cdf, stable_quantile, StableLaw};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LimitError {
    #[error("level {0} is outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("stable index {0} is outside (1, 2)")]
    BadAlpha(f64),
    #[error("argument is NaN")]
    NotANumber,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("{0} moment is infinite")]
    InfiniteMoment(&'static str),
    #[error("clause/model mismatch: {0}")]
    ClauseMismatch(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// An absolutely continuous law on the real line with a finite mean.
pub trait ContinuousLaw {
    fn cdf(&self, x: f64) -> Result<f64, LimitError>;
    fn pdf(&self, x: f64) -> Result<f64, LimitError>;
    fn quantile(&self, u: f64) -> Result<f64, LimitError>;
    fn mean(&self) -> f64;
    fn has_finite_variance(&self) -> bool;

    /// Absolute accuracy of [`ContinuousLaw::lower_partial`] and of the
    /// quantile, as used in distance error bounds.
    fn antiderivative_tolerance(&self) -> f64 {
        if self.has_finite_variance() {
            1e-14
        } else {
            1e-10
        }
    }

    /// `integral of F over (-inf, x]`, i.e. `E (x - X)^+`.
    fn lower_partial(&self, x: f64) -> Result<f64, LimitError>;

    /// `integral of 1 - F over [x, inf)`, i.e. `E (X - x)^+`.
    fn upper_partial(&self, x: f64) -> Result<f64, LimitError> {
        Ok(self.lower_partial(x)? - x + self.mean())
    }

    /// `integral over [a, b] of |y - c|^p f(y) dy` by adaptive quadrature
    /// against the density; `a` and `b` may be infinite.
    fn partial_moment(&self, a: f64, b: f64, c: f64, p: i32) -> Result<(f64, f64), LimitError> {
        if a >= b {
            return Ok((0.0, 0.0));
        }
        if a < c && c < b {
            let (v1, e1) = self.partial_moment(a, c, c, p)?;
            let (v2, e2) = self.partial_moment(c, b, c, p)?;
            return Ok((v1 + v2, e1 + e2));
        }
        let mut failure = None;
        let mut g = |y: f64| match self.pdf(y) {
            Ok(d) if d > 0.0 => (y - c).abs().powi(p) * d,
            Ok(_) => 0.0,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        };
        let (abs_tol, rel_tol) = (1e-13, 1e-11);
        let r = match (a.is_finite(), b.is_finite()) {
            (true, true) => integrate(&mut g, a, b, abs_tol, rel_tol)?,
            (false, true) => integrate_lower_tail(&mut g, b, abs_tol, rel_tol)?,
            (true, false) => integrate_upper_tail(&mut g, a, abs_tol, rel_tol)?,
            (false, false) => unreachable!("split at finite c above"),
        };
        match failure {
            Some(e) => Err(e),
            None => Ok((r.value, r.error)),
        }
    }
}

/// The limit laws appearing in the theorems.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitLaw {
    Normal,
    Stable {
        alpha: f64,
        #[serde(skip)]
        law: Option<StableLaw>,
    },
}

impl PartialEq for LimitLaw {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (LimitLaw::Normal, LimitLaw::Normal) => true,
            (LimitLaw::Stable { alpha: a, .. }, LimitLaw::Stable { alpha: b, .. }) => a == b,
            _ => false,
        }
    }
}

impl LimitLaw {
    pub fn normal() -> Self {
        LimitLaw::Normal
    }

    pub fn stable(alpha: f64) -> Result<Self, LimitError> {
        Ok(LimitLaw::Stable {
            alpha,
            law: Some(StableLaw::new(alpha)?),
        })
    }

    fn stable_law(&self, alpha: f64, law: &Option<StableLaw>) -> Result<StableLaw, LimitError> {
        match law {
            Some(l) => Ok(l.clone()),
            None => StableLaw::new(alpha),
        }
    }

    /// One variate: normal by inversion, stable by Chambers–Mallows–Stuck.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, LimitError> {
        match self {
            LimitLaw::Normal => {
                let u: f64 = rng.random();
                normal_quantile(u.max(f64::MIN_POSITIVE))
            }
            LimitLaw::Stable { alpha, law } => Ok(self.stable_law(*alpha, law)?.sample(rng)),
        }
    }
}

impl ContinuousLaw for LimitLaw {
    fn cdf(&self, x: f64) -> Result<f64, LimitError> {
        match self {
            LimitLaw::Normal => {
                if x.is_nan() {
                    Err(LimitError::NotANumber)
                } else {
                    Ok(normal_cdf(x))
                }
            }
            LimitLaw::Stable { alpha, law } => self.stable_law(*alpha, law)?.cdf(x),
        }
    }

    fn pdf(&self, x: f64) -> Result<f64, LimitError> {
        match self {
            LimitLaw::Normal => Ok(normal_pdf(x)),
            LimitLaw::Stable { alpha, law } => self.stable_law(*alpha, law)?.pdf(x),
        }
    }

    fn quantile(&self, u: f64) -> Result<f64, LimitError> {
        match self {
            LimitLaw::Normal => normal_quantile(u),
            LimitLaw::Stable { alpha, law } => self.stable_law(*alpha, law)?.quantile(u),
        }
    }

    fn mean(&self) -> f64 {
        0.0
    }

    fn has_finite_variance(&self) -> bool {
        matches!(self, LimitLaw::Normal)
    }

    fn lower_partial(&self, x: f64) -> Result<f64, LimitError> {
        match self {
            LimitLaw::Normal => Ok(normal_lower_partial(x)),
            LimitLaw::Stable { alpha, law } => self.stable_law(*alpha, law)?.lower_partial(x),
        }
    }

    fn upper_partial(&self, x: f64) -> Result<f64, LimitError> {
        match self {
            LimitLaw::Normal => Ok(normal_upper_partial(x)),
            LimitLaw::Stable { alpha, law } => self.stable_law(*alpha, law)?.upper_partial(x),
        }
    }
}
