//! Laws of the multiplicative factor `eta` in `(0, 1]` and of `log eta`.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::limits::{ContinuousLaw, LimitError};
use crate::numeric::special::{beta_reg, digamma, ln_beta, trigamma};
use crate::numeric::{brent, integrate, integrate_lower_tail};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaLaw {
    Beta { alpha: f64, beta: f64 },
    Point { w: f64 },
}

impl EtaLaw {
    pub fn uniform() -> Self {
        EtaLaw::Beta {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            EtaLaw::Beta { alpha, beta }
                if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() =>
            {
                Ok(())
            }
            EtaLaw::Point { w } if w > 0.0 && w < 1.0 => Ok(()),
            other => Err(ModelError::invalid(format!("invalid factor law {other:?}"))),
        }
    }

    /// `mu0 = E|log eta|`.
    pub fn mu0(&self) -> f64 {
        match *self {
            EtaLaw::Beta { alpha, beta } => digamma(alpha + beta) - digamma(alpha),
            EtaLaw::Point { w } => -w.ln(),
        }
    }

    /// `sigma0^2 = Var(log eta)`.
    pub fn sigma02(&self) -> f64 {
        match *self {
            EtaLaw::Beta { alpha, beta } => trigamma(alpha) - trigamma(alpha + beta),
            EtaLaw::Point { .. } => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            EtaLaw::Beta { alpha, beta } => alpha / (alpha + beta),
            EtaLaw::Point { w } => w,
        }
    }

    /// `|log eta|` is nonarithmetic exactly for the continuous laws.
    pub fn nonarithmetic(&self) -> bool {
        matches!(self, EtaLaw::Beta { .. })
    }

    /// `ln E[(1 - W)^k W^(n-k)]`.
    pub fn ln_mixed_moment(&self, n: f64, k: f64) -> f64 {
        match *self {
            EtaLaw::Beta { alpha, beta } => ln_beta(alpha + n - k, beta + k) - ln_beta(alpha, beta),
            EtaLaw::Point { w } => {
                let a = if k > 0.0 { k * (-w).ln_1p() } else { 0.0 };
                let b = if n - k > 0.0 { (n - k) * w.ln() } else { 0.0 };
                a + b
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            EtaLaw::Beta { alpha, beta } => {
                let d = Beta::new(alpha, beta).expect("validated parameters");
                // Beta variates can round to 0 for tiny alpha; keep eta in (0, 1].
                d.sample(rng).max(f64::MIN_POSITIVE)
            }
            EtaLaw::Point { w } => w,
        }
    }

    /// Law of `log eta` as a continuous law, if it is one.
    pub fn log_law(&self) -> Option<LogEtaLaw> {
        match *self {
            EtaLaw::Beta { alpha, beta } => Some(LogEtaLaw::new(alpha, beta)),
            EtaLaw::Point { .. } => None,
        }
    }
}

/// `log eta` for `eta ~ Beta(a, b)`, supported on `(-inf, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEtaLaw {
    a: f64,
    b: f64,
    ln_b: f64,
}

const QUAD_ABS: f64 = 1e-15;
const QUAD_REL: f64 = 1e-13;

impl LogEtaLaw {
    pub fn new(a: f64, b: f64) -> Self {
        LogEtaLaw {
            a,
            b,
            ln_b: ln_beta(a, b),
        }
    }

    fn check(x: f64) -> Result<(), LimitError> {
        if x.is_nan() {
            Err(LimitError::NotANumber)
        } else {
            Ok(())
        }
    }
}

impl ContinuousLaw for LogEtaLaw {
    fn cdf(&self, x: f64) -> Result<f64, LimitError> {
        Self::check(x)?;
        Ok(if x >= 0.0 {
            1.0
        } else {
            beta_reg(self.a, self.b, x.exp())
        })
    }

    fn pdf(&self, x: f64) -> Result<f64, LimitError> {
        Self::check(x)?;
        if x >= 0.0 {
            return Ok(0.0);
        }
        Ok((self.a * x + (self.b - 1.0) * (-x.exp_m1()).ln() - self.ln_b).exp())
    }

    fn quantile(&self, u: f64) -> Result<f64, LimitError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(LimitError::LevelOutOfRange(u));
        }
        let (mut lo, mut hi) = (-1.0, 0.0);
        while beta_reg(self.a, self.b, f64::exp(lo)) > u {
            hi = lo;
            lo *= 2.0;
            if lo < -1e6 {
                return Err(LimitError::NoRoot(format!("log-beta quantile at {u}")));
            }
        }
        let x = brent(|x| beta_reg(self.a, self.b, x.exp()) - u, lo, hi, 1e-15)
            .map_err(|e| LimitError::NoRoot(e.to_string()))?;
        Ok(x)
    }

    fn mean(&self) -> f64 {
        digamma(self.a) - digamma(self.a + self.b)
    }

    fn has_finite_variance(&self) -> bool {
        true
    }

    fn antiderivative_tolerance(&self) -> f64 {
        1e-12
    }

    fn lower_partial(&self, x: f64) -> Result<f64, LimitError> {
        Self::check(x)?;
        let mu0 = -self.mean();
        if x >= 0.0 {
            return Ok(mu0 + x);
        }
        let f = |y: f64| beta_reg(self.a, self.b, y.exp());
        if x <= self.mean() {
            Ok(integrate_lower_tail(f, x, QUAD_ABS, QUAD_REL)?.value)
        } else {
            Ok(mu0 - integrate(f, x, 0.0, QUAD_ABS, QUAD_REL)?.value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_log_moments() {
        let u = EtaLaw::uniform();
        assert!((u.mu0() - 1.0).abs() < 1e-14);
        assert!((u.sigma02() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn log_uniform_is_exponential() {
        let l = EtaLaw::uniform().log_law().unwrap();
        for &x in &[-5.0, -1.0, -0.2, -1e-6] {
            assert!((l.cdf(x).unwrap() - f64::exp(x)).abs() < 1e-14);
            assert!((l.pdf(x).unwrap() - f64::exp(x)).abs() < 1e-14);
            assert!((l.lower_partial(x).unwrap() - f64::exp(x)).abs() < 1e-13);
        }
        assert!((l.quantile(0.5).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert!((l.upper_partial(-0.3).unwrap() - (f64::exp(-0.3) + 0.3 - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn beta_one_minus_alpha_mean_by_quadrature() {
        for &alpha in &[0.3, 0.5, 0.8] {
            let eta = EtaLaw::Beta {
                alpha: 1.0 - alpha,
                beta: alpha,
            };
            assert!((eta.mean() - (1.0 - alpha)).abs() < 1e-15);
            let l = eta.log_law().unwrap();
            // s = 1 - eta keeps the singularity at eta = 1 resolvable
            let by_density = integrate(
                |s: f64| l.pdf((-s).ln_1p()).unwrap(),
                0.0,
                1.0,
                1e-12,
                1e-11,
            )
            .unwrap();
            let by_cdf = integrate(
                |s: f64| 1.0 - l.cdf((-s).ln_1p()).unwrap(),
                0.0,
                1.0,
                1e-12,
                1e-11,
            )
            .unwrap();
            assert!(
                (by_density.value - (1.0 - alpha)).abs() < 1e-9,
                "{}",
                by_density.value
            );
            assert!(
                (by_cdf.value - (1.0 - alpha)).abs() < 1e-9,
                "{}",
                by_cdf.value
            );
            let mu0 = integrate_lower_tail(|x| l.cdf(x).unwrap(), 0.0, 1e-13, 1e-12)
                .unwrap()
                .value;
            assert!((mu0 - eta.mu0()).abs() < 1e-9, "{mu0} vs {}", eta.mu0());
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let l = LogEtaLaw::new(0.4, 0.6);
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let x = l.quantile(u).unwrap();
            assert!((l.cdf(x).unwrap() - u).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_partial_branches_agree() {
        let l = LogEtaLaw::new(0.7, 0.3);
        let m = l.mean();
        let below = l.lower_partial(m - 1e-9).unwrap();
        let above = l.lower_partial(m + 1e-9).unwrap();
        assert!((above - below).abs() < 1e-8);
    }

    #[test]
    fn sampler_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eta = EtaLaw::Beta {
            alpha: 0.5,
            beta: 0.5,
        };
        let m = 100_000;
        let s: f64 = (0..m).map(|_| -eta.sample(&mut rng).ln()).sum::<f64>() / m as f64;
        let se = (eta.sigma02() / m as f64).sqrt();
        assert!((s - eta.mu0()).abs() < 4.0 * se);
    }
}
