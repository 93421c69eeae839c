//! Centering and scaling constants `a_n`, `b_n` of the limit theorems.

use serde::{Deserialize, Serialize};

use super::{normalizer_c, LimitError, LimitLaw, NormalizerRoute};
use crate::models::{Regime, RegimeLimits};

/// `A`: finite variance. `B`: infinite variance with slowly varying
/// truncated second moment. `C`: tail index in `(1, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Clause {
    A,
    B,
    C,
}

impl std::str::FromStr for Clause {
    type Err = LimitError;
    fn from_str(s: &str) -> Result<Self, LimitError> {
        match s {
            "A" | "a" => Ok(Clause::A),
            "B" | "b" => Ok(Clause::B),
            "C" | "c" => Ok(Clause::C),
            other => Err(LimitError::Invalid(format!("unknown clause '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Normalization {
    pub a_n: f64,
    pub b_n: f64,
    pub clause: Clause,
    pub regime: Regime,
    /// `c(n)` (or `c(log n)`) for clauses B and C.
    pub c: Option<f64>,
    pub c_route: Option<NormalizerRoute>,
    /// The limit law of `(T_n - a_n) / b_n`.
    #[serde(skip)]
    pub law: LimitLaw,
}

/// Constants for `(T_n - a_n)/b_n`. In the additive regime the argument is
/// `n`; in the multiplicative regime the clauses are applied to `log n`.
pub fn theorem_normalization(
    limits: &RegimeLimits,
    n: f64,
    clause: Clause,
) -> Result<Normalization, LimitError> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(LimitError::Invalid(format!("state n = {n} must exceed 1")));
    }
    if !limits.clauses().contains(&clause) {
        return Err(LimitError::ClauseMismatch(format!(
            "clause {clause:?} needs hypotheses the model does not satisfy (available: {:?})",
            limits.clauses()
        )));
    }
    let (t, mean, var, tail) = match limits {
        RegimeLimits::Add(l) => (n, l.mu, l.sigma2, l.tail.as_ref()),
        RegimeLimits::Mult(l) => (n.ln(), l.mu0, l.sigma02, l.tail.as_ref()),
    };
    if !(t >= 1.0) {
        return Err(LimitError::Invalid(format!(
            "normalization argument {t} is below 1"
        )));
    }
    let a_n = t / mean;
    let (b_n, c, route, law) = match clause {
        Clause::A => (
            var.sqrt() * mean.powf(-1.5) * t.sqrt(),
            None,
            None,
            LimitLaw::normal(),
        ),
        Clause::B => {
            let spec = tail.expect("clause B has a tail");
            let c = normalizer_c(spec, t)?;
            (
                mean.powf(-1.5) * c.c,
                Some(c.c),
                Some(c.route),
                LimitLaw::normal(),
            )
        }
        Clause::C => {
            let spec = tail.expect("clause C has a tail");
            let alpha = spec.alpha;
            let c = normalizer_c(spec, t)?;
            (
                mean.powf(-(alpha + 1.0) / alpha) * c.c,
                Some(c.c),
                Some(c.route),
                LimitLaw::stable(alpha)?,
            )
        }
    };
    Ok(Normalization {
        a_n,
        b_n,
        clause,
        regime: limits.regime(),
        c,
        c_route: route,
        law,
    })
}
