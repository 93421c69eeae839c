//! Decreasing-chain models in canonical form.
//!
//! Every model lives on states `0..=s` with `0` absorbing. From state `s` the
//! chain moves to `s - d` where `d` is drawn from the model's decrement law on
//! `{1, ..., s}`. The zero-jumps count of a barrier walk also allows `d = 0`.

mod eta;
mod gap;
mod steps;

use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dist::{DistError, LatticeDist};
use crate::limits::{Clause, LimitError, TailSpec};
use crate::numeric::neumaier_sum;
use crate::numeric::special::{ln_choose, ln_gamma};
use crate::wasserstein::DistanceError;

pub use eta::{EtaLaw, LogEtaLaw};
pub use gap::{coupling_gap, GapReport};
pub use steps::IntStep;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("state {0} is not valid for this model")]
    BadState(u64),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Limit(#[from] LimitError),
}

impl ModelError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ModelError::InvalidParameter(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Add,
    Mult,
}

/// Model name plus parameters; this is also the registry's JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `P(I_n = n) = 1 - P(I_n = 1) = 1/n`.
    SimpleChain,
    /// Block counting chain of the Beta(a, b)-coalescent, state = blocks - 1.
    BetaCoalescent { a: f64, b: f64 },
    /// Number of occupied boxes of the Bernoulli sieve with factor law `w`.
    BernoulliSieve { w: EtaLaw },
    /// Jumps of a walk with barrier, state = gap to the barrier - 1.
    BarrierWalk { zeta: IntStep },
    /// Zero jumps of a walk with barrier; `zeta` has tail index `alpha` in (0, 1).
    BarrierZeroJumps { zeta: IntStep, alpha: f64 },
    /// The renewal counting process itself: decrement `xi ∧ s`.
    Renewal { xi: IntStep },
}

/// Limit data of the additive regime.
#[derive(Debug, Clone)]
pub struct AddLimits {
    pub xi: IntStep,
    pub mu: f64,
    pub sigma2: f64,
    pub tail: Option<TailSpec>,
    /// Set when `xi` is a point mass and no limit theorem applies.
    pub degenerate: bool,
}

/// Limit data of the multiplicative regime.
#[derive(Debug, Clone)]
pub struct MultLimits {
    pub eta: EtaLaw,
    pub mu0: f64,
    pub sigma02: f64,
    pub tail: Option<TailSpec>,
}

#[derive(Debug, Clone)]
pub enum RegimeLimits {
    Add(AddLimits),
    Mult(MultLimits),
}

impl RegimeLimits {
    pub fn regime(&self) -> Regime {
        match self {
            RegimeLimits::Add(_) => Regime::Add,
            RegimeLimits::Mult(_) => Regime::Mult,
        }
    }

    /// Clauses whose hypotheses the limit data satisfy.
    pub fn clauses(&self) -> Vec<Clause> {
        let (mean, var, tail) = match self {
            RegimeLimits::Add(l) if l.degenerate => return Vec::new(),
            RegimeLimits::Add(l) => (l.mu, l.sigma2, &l.tail),
            RegimeLimits::Mult(l) if !l.eta.nonarithmetic() => return Vec::new(),
            RegimeLimits::Mult(l) => (l.mu0, l.sigma02, &l.tail),
        };
        if !mean.is_finite() {
            return Vec::new();
        }
        let mut out = Vec::new();
        if var.is_finite() {
            out.push(Clause::A);
        }
        match tail {
            Some(t) if t.alpha == 2.0 => out.push(Clause::B),
            Some(t) if t.alpha > 1.0 && t.alpha < 2.0 => out.push(Clause::C),
            _ => {}
        }
        out
    }
}

/// Log-gamma tables for the coalescent merge law, grown on demand.
#[derive(Debug, Default)]
struct LnTables {
    fact: Vec<f64>,
    ga: Vec<f64>,
    gb: Vec<f64>,
}

#[derive(Debug, Default)]
struct Caches {
    coalescent: RwLock<Arc<LnTables>>,
    renewal_mass: RwLock<Arc<Vec<f64>>>,
}

/// Mass below which the coalescent merge law is cut, the rest going to the
/// largest decrement.
pub const COALESCENT_CAP: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct DecrementModel {
    spec: ModelSpec,
    limits: RegimeLimits,
    caches: Arc<Caches>,
}

impl DecrementModel {
    pub fn new(spec: ModelSpec) -> Result<Self, ModelError> {
        let limits = match &spec {
            ModelSpec::SimpleChain => RegimeLimits::Add(AddLimits {
                xi: IntStep::uniform(1, 1),
                mu: 1.0,
                sigma2: 0.0,
                tail: None,
                degenerate: true,
            }),
            ModelSpec::BetaCoalescent { a, b } => {
                if !(*a > 0.0 && *a <= 1.0) || !(*b > 0.0 && b.is_finite()) {
                    return Err(ModelError::invalid(format!(
                        "beta coalescent needs a in (0, 1], b > 0; got a={a}, b={b}"
                    )));
                }
                add_limits(IntStep::CoalescentLimit { a: *a })
            }
            ModelSpec::BernoulliSieve { w } => {
                w.validate()?;
                mult_limits(*w)
            }
            ModelSpec::BarrierWalk { zeta } => {
                zeta.validate()?;
                if !(zeta.pmf(1) > 0.0) {
                    return Err(ModelError::invalid("barrier walk needs P(zeta = 1) > 0"));
                }
                add_limits(zeta.clone())
            }
            ModelSpec::BarrierZeroJumps { zeta, alpha } => {
                zeta.validate()?;
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(ModelError::invalid(format!(
                        "zero-jumps tail index must be in (0, 1), got {alpha}"
                    )));
                }
                mult_limits(EtaLaw::Beta {
                    alpha: 1.0 - alpha,
                    beta: *alpha,
                })
            }
            ModelSpec::Renewal { xi } => {
                xi.validate()?;
                add_limits(xi.clone())
            }
        };
        Ok(DecrementModel {
            spec,
            limits,
            caches: Arc::default(),
        })
    }

    pub fn simple_chain() -> Self {
        Self::new(ModelSpec::SimpleChain).expect("no parameters")
    }

    pub fn beta_coalescent(a: f64, b: f64) -> Result<Self, ModelError> {
        Self::new(ModelSpec::BetaCoalescent { a, b })
    }

    pub fn bernoulli_sieve(w: EtaLaw) -> Result<Self, ModelError> {
        Self::new(ModelSpec::BernoulliSieve { w })
    }

    pub fn barrier_walk(zeta: IntStep) -> Result<Self, ModelError> {
        Self::new(ModelSpec::BarrierWalk { zeta })
    }

    /// Zero jumps with the discrete Pareto increment `P(zeta >= k) = k^-alpha`.
    pub fn barrier_zero_jumps(alpha: f64) -> Result<Self, ModelError> {
        Self::new(ModelSpec::BarrierZeroJumps {
            zeta: IntStep::pareto(alpha),
            alpha,
        })
    }

    pub fn renewal(xi: IntStep) -> Result<Self, ModelError> {
        Self::new(ModelSpec::Renewal { xi })
    }

    pub fn from_json(value: &Value) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_value(value.clone())
            .map_err(|e| ModelError::invalid(e.to_string()))?;
        Self::new(spec)
    }

    /// Looks a model up by registry name with a JSON object of parameters.
    pub fn from_name(name: &str, params: &Value) -> Result<Self, ModelError> {
        if !REGISTRY.iter().any(|e| e.name == name) {
            return Err(ModelError::UnknownModel(name.to_string()));
        }
        let mut obj = match params {
            Value::Object(m) => m.clone(),
            Value::Null => Default::default(),
            _ => return Err(ModelError::invalid("parameters must be a JSON object")),
        };
        obj.insert("model".into(), Value::String(name.into()));
        Self::from_json(&Value::Object(obj))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &'static str {
        match self.spec {
            ModelSpec::SimpleChain => "simple_chain",
            ModelSpec::BetaCoalescent { .. } => "beta_coalescent",
            ModelSpec::BernoulliSieve { .. } => "bernoulli_sieve",
            ModelSpec::BarrierWalk { .. } => "barrier_walk",
            ModelSpec::BarrierZeroJumps { .. } => "barrier_zero_jumps",
            ModelSpec::Renewal { .. } => "renewal",
        }
    }

    pub fn notes(&self) -> &'static str {
        REGISTRY
            .iter()
            .find(|e| e.name == self.name())
            .map(|e| e.notes)
            .unwrap_or("")
    }

    /// Hex digest of the canonical parameter JSON.
    pub fn params_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.spec).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn regime(&self) -> Regime {
        self.limits.regime()
    }

    pub fn limits(&self) -> &RegimeLimits {
        &self.limits
    }

    /// Difference between the model's own state label and the canonical state.
    pub fn offset(&self) -> u64 {
        match self.spec {
            ModelSpec::BetaCoalescent { .. }
            | ModelSpec::BarrierWalk { .. }
            | ModelSpec::BarrierZeroJumps { .. } => 1,
            _ => 0,
        }
    }

    /// Whether the decrement may be zero (self-loop).
    pub fn allows_stay(&self) -> bool {
        matches!(self.spec, ModelSpec::BarrierZeroJumps { .. })
    }

    /// Decrement probabilities indexed by `d = 0..=s`.
    pub fn decrement_probs(&self, s: u64) -> Result<Vec<f64>, ModelError> {
        if s == 0 {
            return Err(ModelError::BadState(0));
        }
        let len = s as usize + 1;
        let mut p = match &self.spec {
            ModelSpec::SimpleChain => {
                let mut p = vec![0.0; len];
                p[1] += 1.0 - 1.0 / s as f64;
                p[len - 1] += 1.0 / s as f64;
                p
            }
            ModelSpec::BetaCoalescent { a, b } => self.coalescent_probs(s, *a, *b),
            ModelSpec::BernoulliSieve { w } => sieve_probs(s, w),
            ModelSpec::BarrierWalk { zeta } => {
                zeta.conditioned_at_most(s).ok_or(ModelError::BadState(s))?
            }
            ModelSpec::BarrierZeroJumps { zeta, .. } => {
                let u = self.renewal_mass(zeta, s);
                // P(next = n - d) = u(d) P(zeta >= n - d), n = s + 1
                (0..len).map(|d| u[d] * zeta.sf(s - d as u64)).collect()
            }
            ModelSpec::Renewal { xi } => {
                let t = xi.truncated(s);
                let mut p = vec![0.0; len];
                for (&a, &m) in t.atoms().iter().zip(t.masses()) {
                    p[a as usize] = m;
                }
                p
            }
        };
        let total = neumaier_sum(p.iter().copied());
        if !(total > 0.0) {
            return Err(ModelError::BadState(s));
        }
        p.iter_mut().for_each(|x| *x /= total);
        // rounding residual of the division goes to the largest entry
        let residual = 1.0 - neumaier_sum(p.iter().copied());
        let top = (0..len)
            .max_by(|&i, &j| p[i].total_cmp(&p[j]))
            .expect("row is nonempty");
        p[top] += residual;
        Ok(p)
    }

    pub fn decrement_pmf(&self, s: u64) -> Result<LatticeDist, ModelError> {
        Ok(LatticeDist::from_int_pmf(
            0,
            &self.decrement_probs(s)?,
            0.0,
        )?)
    }

    /// One decrement from state `s >= 1`, using native samplers where the
    /// pmf is expensive.
    pub fn sample_decrement<R: Rng + ?Sized>(
        &self,
        s: u64,
        rng: &mut R,
    ) -> Result<u64, ModelError> {
        if s == 0 {
            return Err(ModelError::BadState(0));
        }
        Ok(match &self.spec {
            ModelSpec::SimpleChain => {
                if rng.random::<f64>() * (s as f64) < 1.0 {
                    s
                } else {
                    1
                }
            }
            ModelSpec::BernoulliSieve { w } => loop {
                let eta = w.sample(rng);
                let j = Binomial::new(s, 1.0 - eta)
                    .map_err(|e| ModelError::invalid(e.to_string()))?
                    .sample(rng);
                if j >= 1 {
                    break j;
                }
            },
            ModelSpec::BarrierWalk { zeta } => loop {
                let z = zeta.sample(rng);
                if z <= s {
                    break z;
                }
            },
            ModelSpec::BarrierZeroJumps { zeta, .. } => {
                // last point of the unrestricted walk below n = s + 1
                let n = s + 1;
                let mut pos = 0u64;
                loop {
                    let next = pos.saturating_add(zeta.sample(rng));
                    if next >= n {
                        break pos;
                    }
                    pos = next;
                }
            }
            ModelSpec::Renewal { xi } => xi.sample(rng).min(s),
            ModelSpec::BetaCoalescent { .. } => {
                let p = self.decrement_probs(s)?;
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = s;
                for (d, &q) in p.iter().enumerate() {
                    acc += q;
                    if acc > u {
                        pick = d as u64;
                        break;
                    }
                }
                pick
            }
        })
    }

    fn coalescent_probs(&self, s: u64, a: f64, b: f64) -> Vec<f64> {
        let m = s as usize + 1;
        let t = self.ln_tables(m, a, b);
        // weight of a k-merge: C(m, k) B(k - 2 + a, m - k + b), common factors dropped
        let lw: Vec<f64> = (2..=m)
            .map(|k| t.fact[m] - t.fact[k] - t.fact[m - k] + t.ga[k - 2] + t.gb[m - k])
            .collect();
        let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = vec![0.0; m];
        for (i, &l) in lw.iter().enumerate() {
            p[i + 1] = (l - top).exp();
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        let mut acc = 0.0;
        for d in 1..m {
            acc += p[d];
            if acc >= 1.0 - COALESCENT_CAP && d + 1 < m {
                let rest: f64 = p[d + 1..].iter().sum();
                p[d + 1..].iter_mut().for_each(|x| *x = 0.0);
                p[m - 1] = rest;
                break;
            }
        }
        p
    }

    fn ln_tables(&self, m: usize, a: f64, b: f64) -> Arc<LnTables> {
        {
            let t = self.caches.coalescent.read().expect("cache lock");
            if t.fact.len() > m {
                return t.clone();
            }
        }
        let mut guard = self.caches.coalescent.write().expect("cache lock");
        if guard.fact.len() <= m {
            let size = (2 * m).max(64) + 1;
            let fact = (0..size).map(|j| ln_gamma(j as f64 + 1.0)).collect();
            let ga = (0..size).map(|j| ln_gamma(j as f64 + a)).collect();
            let gb = (0..size).map(|j| ln_gamma(j as f64 + b)).collect();
            *guard = Arc::new(LnTables { fact, ga, gb });
        }
        guard.clone()
    }

    /// Renewal mass function `u(d) = sum_k P(S_k = d)` for `d = 0..=s`.
    fn renewal_mass(&self, zeta: &IntStep, s: u64) -> Arc<Vec<f64>> {
        let need = s as usize + 1;
        {
            let u = self.caches.renewal_mass.read().expect("cache lock");
            if u.len() >= need {
                return u.clone();
            }
        }
        let mut guard = self.caches.renewal_mass.write().expect("cache lock");
        if guard.len() < need {
            let size = need.max(2 * guard.len()).max(64);
            let p = zeta.pmf_upto(size as u64 - 1);
            let mut u = vec![0.0; size];
            u[0] = 1.0;
            for d in 1..size {
                let mut acc = 0.0;
                for j in 1..=d {
                    acc += p[j] * u[d - j];
                }
                u[d] = acc;
            }
            *guard = Arc::new(u);
        }
        guard.clone()
    }
}

fn add_limits(xi: IntStep) -> RegimeLimits {
    RegimeLimits::Add(AddLimits {
        mu: xi.mean(),
        sigma2: xi.variance(),
        tail: xi.tail(),
        degenerate: xi.max_atom() == Some(1),
        xi,
    })
}

fn mult_limits(eta: EtaLaw) -> RegimeLimits {
    RegimeLimits::Mult(MultLimits {
        mu0: eta.mu0(),
        sigma02: eta.sigma02(),
        tail: None,
        eta,
    })
}

fn sieve_probs(n: u64, w: &EtaLaw) -> Vec<f64> {
    let nf = n as f64;
    let lw: Vec<f64> = (1..=n)
        .map(|k| ln_choose(nf, k as f64) + w.ln_mixed_moment(nf, k as f64))
        .collect();
    let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    std::iter::once(0.0)
        .chain(lw.iter().map(|l| (l - top).exp()))
        .collect()
}

/// One registry entry: name, parameter schema and a short description.
pub struct RegistryEntry {
    pub name: &'static str,
    pub params: &'static str,
    pub example: fn() -> Value,
    pub notes: &'static str,
}

pub static REGISTRY: &[RegistryEntry] = &[
    RegistryEntry {
        name: "simple_chain",
        params: "{}",
        example: || json!({}),
        notes: "P(I_n = n) = 1/n, otherwise decrement 1; T_n is uniform on 1..n. Negative control: no clause applies.",
    },
    RegistryEntry {
        name: "beta_coalescent",
        params: r#"{"a": (0,1], "b": >0}"#,
        example: || json!({"a": 0.5, "b": 1.0}),
        notes: "Collisions of the Beta(a,b)-coalescent; state = blocks - 1, decrement = merge size - 1.",
    },
    RegistryEntry {
        name: "bernoulli_sieve",
        params: r#"{"w": {"kind": "beta", "alpha": >0, "beta": >0} | {"kind": "point", "w": (0,1)}}"#,
        example: || json!({"w": {"kind": "beta", "alpha": 1.0, "beta": 1.0}}),
        notes: "Occupied boxes of the Bernoulli sieve; multiplicative regime with eta = W.",
    },
    RegistryEntry {
        name: "barrier_walk",
        params: r#"{"zeta": step}"#,
        example: || json!({"zeta": {"kind": "uniform", "lo": 1, "hi": 3}}),
        notes: "Jumps of a walk with barrier; state = gap - 1, decrement = zeta given zeta <= state.",
    },
    RegistryEntry {
        name: "barrier_zero_jumps",
        params: r#"{"zeta": step, "alpha": (0,1)}"#,
        example: || json!({"zeta": {"kind": "discrete_pareto", "alpha": 0.5}, "alpha": 0.5}),
        notes: "Zero jumps (+1) of a walk with barrier; next state is the undershoot. Decrement 0 is allowed.",
    },
    RegistryEntry {
        name: "renewal",
        params: r#"{"xi": step}"#,
        example: || json!({"xi": {"kind": "uniform", "lo": 1, "hi": 3}}),
        notes: "The renewal counting process N_n itself, decrement xi ∧ n.",
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::StepLaw;
    use crate::numeric::integrate;
    use crate::numeric::special::ln_beta;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_models() -> Vec<DecrementModel> {
        REGISTRY
            .iter()
            .map(|e| DecrementModel::from_name(e.name, &(e.example)()).unwrap())
            .collect()
    }

    #[test]
    fn simple_chain_pmfs() {
        let m = DecrementModel::simple_chain();
        let p5 = m.decrement_pmf(5).unwrap();
        assert_eq!(p5.atoms(), &[1.0, 5.0]);
        assert!((p5.pmf_at(1.0) - 0.8).abs() < 1e-15 && (p5.pmf_at(5.0) - 0.2).abs() < 1e-15);
        assert_eq!(m.decrement_pmf(1).unwrap(), LatticeDist::point(1.0));
        let p2 = m.decrement_pmf(2).unwrap();
        assert!((p2.pmf_at(1.0) - 0.5).abs() < 1e-15 && (p2.pmf_at(2.0) - 0.5).abs() < 1e-15);
    }

    /// `lambda_{m,k}` for Lambda = Beta(a, b) by quadrature, with `x = y^(1/a)`
    /// removing the endpoint singularity.
    fn lambda_quadrature(m: usize, k: usize, a: f64, b: f64) -> f64 {
        let f = |y: f64| {
            if y <= 0.0 {
                return 0.0;
            }
            let x = y.powf(1.0 / a);
            // x^(k-2) (1-x)^(m-k) x^(a-1) (1-x)^(b-1) / B(a,b) dx, dx = x^(1-a) dy / a
            x.powi(k as i32 - 2) * (1.0 - x).powf((m - k) as f64 + b - 1.0)
                / a
                / ln_beta(a, b).exp()
        };
        integrate(f, 0.0, 1.0, 0.0, 1e-13).unwrap().value
    }

    #[test]
    fn uniform_lambda_values() {
        assert!((lambda_quadrature(3, 2, 1.0, 1.0) - 0.5).abs() < 1e-13);
        assert!((lambda_quadrature(2, 2, 1.0, 1.0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn coalescent_matches_rate_quadrature() {
        for &(a, b) in &[(1.0, 1.0), (0.5, 1.0), (0.3, 2.5)] {
            let model = DecrementModel::beta_coalescent(a, b).unwrap();
            for m in 2..=50usize {
                let rates: Vec<f64> = (2..=m)
                    .map(|k| (ln_choose(m as f64, k as f64)).exp() * lambda_quadrature(m, k, a, b))
                    .collect();
                let total: f64 = rates.iter().sum();
                let p = model.decrement_probs(m as u64 - 1).unwrap();
                for k in 2..=m {
                    let q = rates[k - 2] / total;
                    assert!(
                        (p[k - 1] - q).abs() < 1e-10,
                        "a={a} b={b} m={m} k={k}: {} vs {q}",
                        p[k - 1]
                    );
                }
            }
        }
    }

    #[test]
    fn uniform_coalescent_three_blocks() {
        // m = 3: rates 3 * 1/2 for pairs and 1 * 1/2 for the triple
        let p = DecrementModel::beta_coalescent(1.0, 1.0)
            .unwrap()
            .decrement_probs(2)
            .unwrap();
        assert!((p[1] - 0.75).abs() < 1e-14 && (p[2] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn sieve_uniform_is_uniform() {
        let m = DecrementModel::bernoulli_sieve(EtaLaw::uniform()).unwrap();
        for n in 1..=1000u64 {
            let p = m.decrement_probs(n).unwrap();
            let worst = p[1..]
                .iter()
                .map(|x| (x - 1.0 / n as f64).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-12, "n={n}: {worst}");
        }
        let p = DecrementModel::bernoulli_sieve(EtaLaw::Point { w: 0.5 })
            .unwrap()
            .decrement_pmf(1)
            .unwrap();
        assert_eq!(p, LatticeDist::point(1.0));
    }

    #[test]
    fn sieve_point_matches_binomial() {
        let m = DecrementModel::bernoulli_sieve(EtaLaw::Point { w: 0.3 }).unwrap();
        let p = m.decrement_probs(4).unwrap();
        // P(J = k) = C(4,k) 0.7^k 0.3^(4-k) / (1 - 0.3^4)
        let c = [1.0, 4.0, 6.0, 4.0, 1.0];
        for k in 1..=4 {
            let q =
                c[k] * 0.7f64.powi(k as i32) * 0.3f64.powi(4 - k as i32) / (1.0 - 0.3f64.powi(4));
            assert!((p[k] - q).abs() < 1e-15);
        }
    }

    #[test]
    fn barrier_conditioning() {
        let zeta = LatticeDist::new(vec![1.0, 2.0, 7.0], vec![0.5, 0.3, 0.2]).unwrap();
        let m = DecrementModel::barrier_walk(IntStep::Table { dist: zeta }).unwrap();
        // barrier 5 is canonical state 4
        let p = m.decrement_pmf(4).unwrap();
        assert_eq!(p.atoms(), &[1.0, 2.0]);
        assert!((p.pmf_at(1.0) - 0.625).abs() < 1e-15 && (p.pmf_at(2.0) - 0.375).abs() < 1e-15);
        let unit = DecrementModel::barrier_walk(IntStep::uniform(1, 1)).unwrap();
        assert_eq!(unit.decrement_pmf(9).unwrap(), LatticeDist::point(1.0));
        let RegimeLimits::Add(l) = DecrementModel::barrier_walk(IntStep::uniform(1, 3))
            .unwrap()
            .limits()
            .clone()
        else {
            panic!()
        };
        assert_eq!(l.mu, 2.0);
        assert!((l.sigma2 - 2.0 / 3.0).abs() < 1e-15);
        assert!(DecrementModel::barrier_walk(IntStep::uniform(2, 3)).is_err());
    }

    /// Undershoot law by enumerating every walk path that stays below `n`.
    fn undershoot_brute_force(zeta: &[(u64, f64)], n: u64) -> Vec<f64> {
        fn walk(zeta: &[(u64, f64)], n: u64, pos: u64, prob: f64, out: &mut Vec<f64>) {
            for &(z, q) in zeta {
                if pos + z >= n {
                    out[(n - pos) as usize] += prob * q;
                } else {
                    walk(zeta, n, pos + z, prob * q, out);
                }
            }
        }
        let mut out = vec![0.0; n as usize + 1];
        walk(zeta, n, 0, 1.0, &mut out);
        out
    }

    #[test]
    fn zero_jumps_undershoot_matches_paths() {
        let table = [(1u64, 0.5), (2u64, 0.5)];
        let zeta = LatticeDist::new(vec![1.0, 2.0], vec![0.5, 0.5]).unwrap();
        let m = DecrementModel::new(ModelSpec::BarrierZeroJumps {
            zeta: IntStep::Table { dist: zeta },
            alpha: 0.5,
        })
        .unwrap();
        for n in 2..=8u64 {
            let y = undershoot_brute_force(&table, n);
            let p = m.decrement_probs(n - 1).unwrap();
            for j in 1..=n {
                // next state Y_n = j is decrement n - j from canonical n - 1
                assert!(
                    (p[(n - j) as usize] - y[j as usize]).abs() < 1e-15,
                    "n={n} j={j}"
                );
            }
        }
        // n = 2: Y = 1 iff the first step is 1 (then any step crosses), so P = 1/2
        let y = undershoot_brute_force(&table, 2);
        assert!((y[1] - 0.5).abs() < 1e-15);
        let unit = DecrementModel::new(ModelSpec::BarrierZeroJumps {
            zeta: IntStep::uniform(1, 1),
            alpha: 0.5,
        })
        .unwrap();
        for s in 1..20u64 {
            let p = unit.decrement_pmf(s).unwrap();
            assert_eq!(p, LatticeDist::point(s as f64), "undershoot is 1");
        }
    }

    #[test]
    fn zero_jumps_pareto_undershoot_paths() {
        let m = DecrementModel::barrier_zero_jumps(0.6).unwrap();
        // truncated path enumeration is exact for n <= 7 because a step >= n always crosses
        let n = 7u64;
        let step = IntStep::pareto(0.6);
        let mut table: Vec<(u64, f64)> = (1..n).map(|k| (k, step.pmf(k))).collect();
        table.push((n, step.sf(n - 1)));
        let y = undershoot_brute_force(&table, n);
        let p = m.decrement_probs(n - 1).unwrap();
        for j in 1..=n {
            assert!((p[(n - j) as usize] - y[j as usize]).abs() < 1e-14);
        }
        assert!(DecrementModel::barrier_zero_jumps(1.2).is_err());
    }

    #[test]
    fn renewal_decrement_is_truncated_step() {
        let m = DecrementModel::renewal(IntStep::uniform(1, 3)).unwrap();
        assert_eq!(
            m.decrement_pmf(2).unwrap(),
            LatticeDist::new(vec![1.0, 2.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap()
        );
    }

    #[test]
    fn registry_round_trip_and_hash() {
        for m in all_models() {
            let v = serde_json::to_value(m.spec()).unwrap();
            let back = DecrementModel::from_json(&v).unwrap();
            assert_eq!(back.spec(), m.spec());
            assert_eq!(back.params_hash(), m.params_hash());
        }
        assert!(matches!(
            DecrementModel::from_name("nope", &json!({})),
            Err(ModelError::UnknownModel(_))
        ));
        assert!(DecrementModel::from_name("beta_coalescent", &json!({"a": 0.5})).is_err());
    }

    #[test]
    fn clauses_follow_limits() {
        let c = DecrementModel::beta_coalescent(0.5, 1.0).unwrap();
        assert_eq!(c.limits().clauses(), vec![Clause::C]);
        let b = DecrementModel::barrier_walk(IntStep::uniform(1, 3)).unwrap();
        assert_eq!(b.limits().clauses(), vec![Clause::A]);
        assert!(DecrementModel::simple_chain().limits().clauses().is_empty());
        let s = DecrementModel::bernoulli_sieve(EtaLaw::uniform()).unwrap();
        assert_eq!(s.limits().clauses(), vec![Clause::A]);
        assert!(DecrementModel::bernoulli_sieve(EtaLaw::Point { w: 0.5 })
            .unwrap()
            .limits()
            .clauses()
            .is_empty());
        assert!(DecrementModel::beta_coalescent(1.0, 1.0)
            .unwrap()
            .limits()
            .clauses()
            .is_empty());
    }

    #[test]
    fn native_samplers_match_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in all_models() {
            let s = 12u64;
            let p = m.decrement_probs(s).unwrap();
            let reps = 100_000;
            let mut counts = vec![0usize; s as usize + 1];
            for _ in 0..reps {
                counts[m.sample_decrement(s, &mut rng).unwrap() as usize] += 1;
            }
            for d in 0..=s as usize {
                let se = (p[d] * (1.0 - p[d]) / reps as f64).sqrt();
                let obs = counts[d] as f64 / reps as f64;
                assert!(
                    (obs - p[d]).abs() <= 5.0 * se + 1e-12,
                    "{} d={d}: {obs} vs {}",
                    m.name(),
                    p[d]
                );
            }
        }
    }

    #[test]
    fn mult_log_mean_trend() {
        // E[-log(1 - I_n/n)] approaches mu0 for the uniform sieve
        let m = DecrementModel::bernoulli_sieve(EtaLaw::uniform()).unwrap();
        let mut prev = f64::INFINITY;
        for n in [100u64, 1000, 10_000] {
            let p = m.decrement_probs(n).unwrap();
            let e: f64 = (1..n as usize)
                .map(|k| -p[k] * (1.0 - k as f64 / n as f64).ln())
                .sum::<f64>()
                + p[n as usize] * (n as f64).ln();
            let err = (e - 1.0).abs();
            assert!(err < prev && err < 10.0 / (n as f64).sqrt(), "n={n}: {e}");
            prev = err;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn decrement_laws_are_valid(which in 0usize..6, s in 1u64..1000) {
            let m = &all_models()[which];
            let p = m.decrement_probs(s).unwrap();
            prop_assert_eq!(p.len() as u64, s + 1);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            if !m.allows_stay() {
                prop_assert_eq!(p[0], 0.0);
            }
            let d = m.decrement_pmf(s).unwrap();
            prop_assert!(d.max_atom() <= s as f64);
        }
    }
}
