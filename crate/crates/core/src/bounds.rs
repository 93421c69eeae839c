//! The linear recursion `s_n = r_n + sum_{k<n} p_{n,k} s_k` and the
//! O-bound `s_n = O(sum_{k<=n} r*_k psi_k / k)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{coupling_gap, DecrementModel, ModelError};
use crate::numeric::CompensatedSum;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("row p({n}) sums to {total}, expected 1")]
    NotAPmf { n: usize, total: f64 },
    #[error("row p({n}) has length {len}, expected {n}")]
    BadRow { n: usize, len: usize },
    #[error("{what}({n}) = {value} is not admissible")]
    BadSequence {
        what: &'static str,
        n: usize,
        value: f64,
    },
    #[error("need {need} initial values, got {got}")]
    BadInit { need: usize, got: usize },
    #[error("horizon {horizon} is below N = {n}")]
    ShortHorizon { horizon: usize, n: usize },
    #[error("N = {n} must exceed the threshold index a = {a}")]
    ShortRange { n: usize, a: usize },
    #[error("r_k psi_k / k = {value} at k = {k} exceeds the declared bound {bound}")]
    C3Violated { k: usize, value: f64, bound: f64 },
    #[error("model has self-loops; the recursion needs p(n) on 0..n-1")]
    SelfLoops,
    #[error("explicit problem covers n <= {have}, asked for {want}")]
    OutOfRange { have: usize, want: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

type RowFn = dyn Fn(usize) -> Result<Vec<f64>, BoundsError> + Send + Sync;
type SeqFn = dyn Fn(usize) -> Result<f64, BoundsError> + Send + Sync;

/// `(a, s_0..s_a, p, r, psi)`. Rows `p(n)` are laws on `0..n` (length `n`).
#[derive(Clone)]
pub struct RecursionProblem {
    a: usize,
    init: Vec<f64>,
    p: Arc<RowFn>,
    r: Arc<SeqFn>,
    psi: Arc<SeqFn>,
}

impl fmt::Debug for RecursionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecursionProblem")
            .field("a", &self.a)
            .field("init", &self.init)
            .finish_non_exhaustive()
    }
}

/// Choice of `psi` for model instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiChoice {
    /// `psi_n = n`.
    N,
    /// `psi_n = 1`.
    One,
}

impl PsiChoice {
    pub fn value(self, n: usize) -> f64 {
        match self {
            PsiChoice::N => n as f64,
            PsiChoice::One => 1.0,
        }
    }
}

impl std::str::FromStr for PsiChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "n" => Ok(PsiChoice::N),
            "one" | "1" => Ok(PsiChoice::One),
            other => Err(format!("unknown psi choice '{other}' (n or one)")),
        }
    }
}

/// Explicit problem: `rows[n - a - 1] = p(n)`, `r[n - 1] = r_n`, `psi[n - 1] = psi_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitProblem {
    pub a: usize,
    pub init: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub psi: Vec<f64>,
}

impl RecursionProblem {
    pub fn new(
        a: usize,
        init: Vec<f64>,
        p: impl Fn(usize) -> Vec<f64> + Send + Sync + 'static,
        r: impl Fn(usize) -> f64 + Send + Sync + 'static,
        psi: impl Fn(usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, BoundsError> {
        if init.len() != a + 1 {
            return Err(BoundsError::BadInit {
                need: a + 1,
                got: init.len(),
            });
        }
        Ok(RecursionProblem {
            a,
            init,
            p: Arc::new(move |n| Ok(p(n))),
            r: Arc::new(move |n| Ok(r(n))),
            psi: Arc::new(move |n| Ok(psi(n))),
        })
    }

    pub fn from_explicit(e: ExplicitProblem) -> Result<Self, BoundsError> {
        if e.init.len() != e.a + 1 {
            return Err(BoundsError::BadInit {
                need: e.a + 1,
                got: e.init.len(),
            });
        }
        let a = e.a;
        let rows = Arc::new(e.rows);
        let r = Arc::new(e.r);
        let psi = Arc::new(e.psi);
        let have_rows = a + rows.len();
        let (hr, hp) = (r.len(), psi.len());
        Ok(RecursionProblem {
            a,
            init: e.init,
            p: Arc::new(move |n| {
                rows.get(n.wrapping_sub(a + 1))
                    .cloned()
                    .ok_or(BoundsError::OutOfRange {
                        have: have_rows,
                        want: n,
                    })
            }),
            r: Arc::new(move |n| {
                r.get(n.wrapping_sub(1))
                    .copied()
                    .ok_or(BoundsError::OutOfRange { have: hr, want: n })
            }),
            psi: Arc::new(move |n| {
                psi.get(n.wrapping_sub(1))
                    .copied()
                    .ok_or(BoundsError::OutOfRange { have: hp, want: n })
            }),
        })
    }

    /// The instance bounding `e_n`: `p_{n,k} = P(I_n = n - k)`,
    /// `r_n = coupling_gap(model, n, p)` and the chosen `psi`.
    pub fn coupling_instance(
        model: &DecrementModel,
        p: u8,
        psi: PsiChoice,
    ) -> Result<Self, BoundsError> {
        if model.allows_stay() {
            return Err(BoundsError::SelfLoops);
        }
        let (m1, m2) = (model.clone(), model.clone());
        Ok(RecursionProblem {
            a: 0,
            init: vec![0.0],
            p: Arc::new(move |n| {
                let d = m1.decrement_probs(n as u64)?;
                Ok((0..n).map(|k| d[n - k]).collect())
            }),
            r: Arc::new(move |n| Ok(coupling_gap(&m2, n as u64, p)?.value)),
            psi: Arc::new(move |n| Ok(psi.value(n))),
        })
    }

    pub fn threshold(&self) -> usize {
        self.a
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    /// Row `p(n)`, checked to be a law on `0..n`.
    pub fn row(&self, n: usize) -> Result<Vec<f64>, BoundsError> {
        let row = (self.p)(n)?;
        if row.len() != n {
            return Err(BoundsError::BadRow { n, len: row.len() });
        }
        if let Some(&v) = row.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(BoundsError::BadSequence {
                what: "p",
                n,
                value: v,
            });
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BoundsError::NotAPmf { n, total });
        }
        Ok(row)
    }

    pub fn r(&self, n: usize) -> Result<f64, BoundsError> {
        let v = (self.r)(n)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(BoundsError::BadSequence {
                what: "r",
                n,
                value: v,
            });
        }
        Ok(v)
    }

    pub fn psi(&self, n: usize) -> Result<f64, BoundsError> {
        let v = (self.psi)(n)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(BoundsError::BadSequence {
                what: "psi",
                n,
                value: v,
            });
        }
        Ok(v)
    }

    /// Same problem with `r` replaced.
    pub fn with_r(&self, r: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        RecursionProblem {
            r: Arc::new(move |n| Ok(r(n))),
            ..self.clone()
        }
    }
}

/// `s_0, ..., s_N` by forward evaluation.
pub fn solve_recursion(prob: &RecursionProblem, n_max: usize) -> Result<Vec<f64>, BoundsError> {
    if n_max < prob.a {
        return Err(BoundsError::ShortRange {
            n: n_max,
            a: prob.a,
        });
    }
    let mut s = prob.init.clone();
    for n in prob.a + 1..=n_max {
        let row = prob.row(n)?;
        let mut acc = CompensatedSum::new();
        acc.add(prob.r(n)?);
        for (k, &p) in row.iter().enumerate() {
            if p != 0.0 {
                acc.add(p * s[k]);
            }
        }
        s.push(acc.value());
    }
    Ok(s)
}

/// Output of [`rstar_transform`]; index 0 of both vectors is unused.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RStar {
    /// `r*_k = (k / psi_k) level_k`.
    pub rstar: Vec<f64>,
    /// `level_k = sup_{k <= j <= horizon} r_j psi_j / j`, nonincreasing.
    pub level: Vec<f64>,
}

/// Suffix suprema of `r_k psi_k / k` by a backward sweep over `1..=horizon`,
/// reported for `k = 1..=N`.
pub fn rstar_transform(
    r: impl Fn(usize) -> Result<f64, BoundsError>,
    psi: impl Fn(usize) -> Result<f64, BoundsError>,
    n_max: usize,
    horizon: usize,
) -> Result<RStar, BoundsError> {
    if horizon < n_max {
        return Err(BoundsError::ShortHorizon { horizon, n: n_max });
    }
    let mut sup = 0.0f64;
    let mut rstar = vec![0.0; n_max + 1];
    let mut level = vec![0.0; n_max + 1];
    for j in (1..=horizon).rev() {
        let (rj, pj) = (r(j)?, psi(j)?);
        let term = rj * pj / j as f64;
        let attained = term >= sup;
        sup = sup.max(term);
        if j <= n_max {
            level[j] = sup;
            rstar[j] = if attained {
                rj
            } else {
                (sup * j as f64 / pj).max(rj)
            };
        }
    }
    Ok(RStar { rstar, level })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C1Report {
    /// `inf_{n0 < n <= N} (psi_n / n) sum_k (n - 1 - k) p_{n,k}`.
    pub inf: f64,
    pub argmin: usize,
    pub window: (usize, usize),
}

/// Finite-window version of condition (C1); `n0` defaults to `N / 10`.
#[allow(non_snake_case)]
pub fn check_C1(
    prob: &RecursionProblem,
    n_max: usize,
    n0: Option<usize>,
) -> Result<C1Report, BoundsError> {
    let n0 = n0.unwrap_or(n_max / 10).max(prob.a);
    if n0 >= n_max {
        return Err(BoundsError::ShortRange { n: n_max, a: n0 });
    }
    let mut best = (f64::INFINITY, n0 + 1);
    for n in n0 + 1..=n_max {
        let row = prob.row(n)?;
        let mut acc = CompensatedSum::new();
        for (k, &p) in row.iter().enumerate() {
            acc.add((n - 1 - k) as f64 * p);
        }
        let v = prob.psi(n)? / n as f64 * acc.value();
        if v < best.0 {
            best = (v, n);
        }
    }
    Ok(C1Report {
        inf: best.0,
        argmin: best.1,
        window: (n0 + 1, n_max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundOptions {
    pub n0: Option<usize>,
    /// Defaults to `4 N`.
    pub horizon: Option<usize>,
    /// Declared bound on `r_k psi_k / k`, checked over the whole horizon.
    pub c3_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub n_max: usize,
    pub horizon: usize,
    pub s: Vec<f64>,
    pub rstar: Vec<f64>,
    /// `rho_n = s_n / sum_{k<=n} r*_k psi_k / k`; entry 0 unused.
    pub rho: Vec<f64>,
    pub c1: C1Report,
    pub sup_first_half: f64,
    pub sup_second_half: f64,
    /// `sup rho on [N/2, N] <= 1.05 sup rho on [1, N/2]`.
    pub bounded: bool,
}

pub const BOUNDED_SLACK: f64 = 0.05;

pub fn bound_ratio(
    prob: &RecursionProblem,
    n_max: usize,
    opts: BoundOptions,
) -> Result<BoundReport, BoundsError> {
    if n_max < 2 || n_max <= prob.a {
        return Err(BoundsError::ShortRange {
            n: n_max,
            a: prob.a.max(1),
        });
    }
    let horizon = opts.horizon.unwrap_or(4 * n_max);
    let s = solve_recursion(prob, n_max)?;
    let rs = |k: usize| prob.r(k);
    let ps = |k: usize| prob.psi(k);
    if let Some(bound) = opts.c3_bound {
        for k in 1..=horizon {
            let v = prob.r(k)? * prob.psi(k)? / k as f64;
            if v > bound {
                return Err(BoundsError::C3Violated { k, value: v, bound });
            }
        }
    }
    let RStar { rstar, level } = rstar_transform(rs, ps, n_max, horizon)?;
    let c1 = check_C1(prob, n_max, opts.n0)?;
    let mut rho = vec![0.0; n_max + 1];
    let mut acc = CompensatedSum::new();
    for k in 1..=n_max {
        acc.add(level[k]);
        let denom = acc.value();
        rho[k] = if denom > 0.0 {
            s[k] / denom
        } else if s[k] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let half = n_max / 2;
    let sup = |lo: usize, hi: usize| rho[lo..=hi].iter().copied().fold(0.0, f64::max);
    let (first, second) = (sup(1, half.max(1)), sup(half.max(1), n_max));
    Ok(BoundReport {
        n_max,
        horizon,
        s,
        rstar,
        rho,
        c1,
        sup_first_half: first,
        sup_second_half: second,
        bounded: second.is_finite() && second <= first * (1.0 + BOUNDED_SLACK),
    })
}
