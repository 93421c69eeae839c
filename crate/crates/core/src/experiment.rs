//! Config-driven convergence runs: normalized distances of absorption times
//! to their limit laws, renewal approximation diagnostics and trend verdicts.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::absorb::{
    default_budget, simulate_batch, substream, AbsorptionTable, ChainSampler, TableCache,
    SIM_TASK_SIZE,
};
use crate::bounds::{
    bound_ratio, BoundOptions, BoundReport, ExplicitProblem, PsiChoice, RecursionProblem,
};
use crate::dist::LatticeDist;
use crate::limits::{theorem_normalization, Clause, LimitLaw};
use crate::models::{
    coupling_gap, DecrementModel, EtaLaw, ModelError, ModelSpec, Regime, RegimeLimits,
};
use crate::renewal::coupled_counts;
use crate::wasserstein::{dp_discrete, dp_discrete_vs_continuous, jackknife_empirical};

pub const MIN_MC_SAMPLES: usize = 1000;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_JACKKNIFE_GROUPS: usize = 50;
pub const SPEARMAN_THRESHOLD: f64 = -0.8;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration errors, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn config(msg: impl fmt::Display) -> ExperimentError {
    ExperimentError::Config(msg.to_string())
}

fn numeric(msg: impl fmt::Display) -> ExperimentError {
    ExperimentError::Numeric(msg.to_string())
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter(_) | ModelError::UnknownModel(_) => config(e),
            other => numeric(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Constants of the limit theorems.
    #[default]
    Theorem,
    /// Exact (or sample) mean and standard deviation, compared with N(0, 1).
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The absorption time of the chain.
    #[default]
    Chain,
    /// The renewal count of the model's limiting step law.
    Renewal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format '{other}' (csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

/// Grid of state labels: an explicit list, `points` values geometric in `n`
/// from `from` to `to`, or `n = round(e^x)` for `x` evenly spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<u64>),
    Geometric { geometric: GridRange },
    Log { log: GridRange },
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<u64>, ExperimentError> {
        let spaced = |r: &GridRange, f: &dyn Fn(f64) -> f64| -> Result<Vec<u64>, ExperimentError> {
            if r.points == 0 || !(r.from.is_finite() && r.to.is_finite()) || r.from > r.to {
                return Err(config(format!("bad grid range {r:?}")));
            }
            Ok((0..r.points)
                .map(|i| {
                    let x = if r.points == 1 {
                        r.from
                    } else {
                        r.from + (r.to - r.from) * i as f64 / (r.points - 1) as f64
                    };
                    f(x).round() as u64
                })
                .collect())
        };
        let v = match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Geometric { geometric: r } => {
                if !(r.from >= 1.0) {
                    return Err(config("geometric grid must start at 1 or above"));
                }
                let (l0, l1) = (r.from.ln(), r.to.ln());
                spaced(
                    &GridRange {
                        from: l0,
                        to: l1,
                        points: r.points,
                    },
                    &f64::exp,
                )?
            }
            GridSpec::Log { log: r } => spaced(r, &f64::exp)?,
        };
        if v.is_empty() {
            return Err(config("grid is empty"));
        }
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config(format!("grid {v:?} is not strictly increasing")));
        }
        Ok(v)
    }

    /// Geometric in `n` for the additive regime, in `log n` for the multiplicative one.
    pub fn default_for(regime: Regime) -> Self {
        match regime {
            Regime::Add => GridSpec::Geometric {
                geometric: GridRange {
                    from: 100.0,
                    to: 10_000.0,
                    points: 5,
                },
            },
            Regime::Mult => GridSpec::Log {
                log: GridRange {
                    from: 4.0,
                    to: 12.0,
                    points: 5,
                },
            },
        }
    }
}

fn empty_params() -> Value {
    json!({})
}

/// JSON experiment description. Unset keys take the defaults described on
/// each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default = "empty_params")]
    pub params: Value,
    /// Defaults by regime, see [`GridSpec::default_for`].
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Defaults to the first clause the model satisfies.
    #[serde(default)]
    pub clause: Option<Clause>,
    #[serde(default)]
    pub method: Method,
    /// Distance exponent, 1 (default) or 2.
    #[serde(default)]
    pub p: Option<u8>,
    #[serde(default)]
    pub mc_samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Total prune budget of the exact tables.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub normalization: NormalizationMode,
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub jackknife_groups: Option<usize>,
    /// Largest acceptable Monte Carlo error bar.
    #[serde(default)]
    pub max_error: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub timings: bool,
}

impl ExperimentConfig {
    pub fn new(model: &str, params: Value) -> Self {
        ExperimentConfig {
            model: model.to_string(),
            params,
            grid: None,
            clause: None,
            method: Method::Exact,
            p: None,
            mc_samples: None,
            seed: None,
            budget: None,
            normalization: NormalizationMode::Theorem,
            target: Target::Chain,
            jackknife_groups: None,
            max_error: None,
            output: None,
            format: None,
            cache_dir: None,
            timings: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub a_n: f64,
    pub b_n: f64,
    pub d_value: f64,
    pub d_error_bound: f64,
    pub coupling_gap: f64,
    pub c_of_n: f64,
    #[serde(rename = "d_Tn_Nn")]
    pub d_tn_nn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

pub const CSV_HEADER: &str = "n,a_n,b_n,d_value,d_error_bound,coupling_gap,c_of_n,d_Tn_Nn";

/// Writes rows as CSV or JSON lines, flushing after each row.
pub struct RowWriter<W: Write> {
    out: W,
    format: Format,
    timings: bool,
    started: bool,
}

impl<W: Write> RowWriter<W> {
    pub fn new(out: W, format: Format, timings: bool) -> Self {
        RowWriter {
            out,
            format,
            timings,
            started: false,
        }
    }

    pub fn write_row(&mut self, row: &ConvergenceRow) -> std::io::Result<()> {
        match self.format {
            Format::Csv => {
                if !self.started {
                    write!(self.out, "{CSV_HEADER}")?;
                    if self.timings {
                        write!(self.out, ",runtime_ms")?;
                    }
                    writeln!(self.out)?;
                }
                write!(
                    self.out,
                    "{},{},{},{},{},{},{},",
                    row.n,
                    row.a_n,
                    row.b_n,
                    row.d_value,
                    row.d_error_bound,
                    row.coupling_gap,
                    row.c_of_n
                )?;
                if let Some(d) = row.d_tn_nn {
                    write!(self.out, "{d}")?;
                }
                if self.timings {
                    write!(self.out, ",{}", row.runtime_ms.unwrap_or(f64::NAN))?;
                }
                writeln!(self.out)?;
            }
            Format::Jsonl => {
                serde_json::to_writer(&mut self.out, row).map_err(std::io::Error::other)?;
                writeln!(self.out)?;
            }
        }
        self.started = true;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Verdicts on a column that should decrease along the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trend {
    pub values: Vec<f64>,
    pub first: f64,
    pub last: f64,
    /// `last < first / 2`.
    pub halved: bool,
    pub spearman: f64,
    pub strictly_decreasing: bool,
    /// `first - last` exceeds the sum of the two error bars (Monte Carlo only).
    pub exceeds_error: Option<bool>,
}

impl Trend {
    pub fn new(values: &[f64], errors: Option<&[f64]>) -> Self {
        let first = values.first().copied().unwrap_or(f64::NAN);
        let last = values.last().copied().unwrap_or(f64::NAN);
        let enough = values.len() >= 2;
        Trend {
            values: values.to_vec(),
            first,
            last,
            halved: enough && last < first / 2.0,
            spearman: spearman_vs_index(values),
            strictly_decreasing: enough && values.windows(2).all(|w| w[1] < w[0]),
            exceeds_error: errors.map(|e| enough && first - last > e[0] + e[e.len() - 1]),
        }
    }

    /// Halved, Spearman at most [`SPEARMAN_THRESHOLD`] and, when error bars
    /// are present, a decrease beyond them.
    pub fn decreasing(&self) -> bool {
        self.halved && self.spearman <= SPEARMAN_THRESHOLD && self.exceeds_error.unwrap_or(true)
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman correlation of `values` against their position; NaN when
/// undefined.
pub fn spearman_vs_index(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let rv = ranks(values);
    let ri: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in ri.iter().zip(&rv) {
        sxy += (x - mean) * (y - mean);
        sxx += (x - mean).powi(2);
        syy += (y - mean).powi(2);
    }
    if syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub model: String,
    pub params: Value,
    pub regime: Regime,
    pub clause: Clause,
    pub normalization: NormalizationMode,
    pub target: Target,
    pub method: Method,
    pub p: u8,
    pub grid: Vec<u64>,
    pub d: Trend,
    /// `d(T_n, N_n) / c(n)`.
    pub tn_nn_ratio: Option<Trend>,
    /// `coupling_gap * t / c(t)` with `t = n` (additive) or `log n`.
    pub gap_ratio: Trend,
    /// The `d` column decreases by the verdicts of [`Trend::decreasing`].
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub summary: Summary,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sample drawn for grid label `n`; `purpose` separates
/// independent draws at the same label.
pub fn derive_seed(seed: u64, n: u64, purpose: u64) -> u64 {
    splitmix(seed ^ splitmix(n.wrapping_mul(4).wrapping_add(purpose)))
}

/// `L_n = Lambda_{log n}` for `m` walks with factor law `eta`.
pub fn mult_count_batch(eta: &EtaLaw, n: f64, m: usize, seed: u64) -> Vec<u64> {
    let s = n.ln();
    let tasks = m.div_ceil(SIM_TASK_SIZE);
    let chunks: Vec<Vec<u64>> = (0..tasks)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let len = SIM_TASK_SIZE.min(m - i * SIM_TASK_SIZE);
            (0..len)
                .map(|_| coupled_counts(eta, s, 0.0, &mut rng).plain)
                .collect()
        })
        .collect();
    chunks.concat()
}

/// Exact `d_p` between the empirical laws of two samples.
pub fn dp_two_sample(a: &[u64], b: &[u64], p: u8) -> Result<f64, ExperimentError> {
    let emp = |x: &[u64]| {
        let mut sorted = x.to_vec();
        sorted.sort_unstable();
        let m = sorted.len() as f64;
        let (mut atoms, mut masses) = (Vec::new(), Vec::new());
        for run in sorted.chunk_by(|a, b| a == b) {
            atoms.push(run[0] as f64);
            masses.push(run.len() as f64 / m);
        }
        LatticeDist::new(atoms, masses).map_err(numeric)
    };
    Ok(dp_discrete(&emp(a)?, &emp(b)?, p).map_err(numeric)?.value)
}

fn moments(atoms: &[f64], masses: &[f64]) -> (f64, f64) {
    let total: f64 = masses.iter().sum();
    let mean = atoms.iter().zip(masses).map(|(x, m)| x * m).sum::<f64>() / total;
    let var = atoms
        .iter()
        .zip(masses)
        .map(|(x, m)| (x - mean).powi(2) * m)
        .sum::<f64>()
        / total;
    (mean, var)
}

/// A validated configuration.
struct Plan {
    cfg: ExperimentConfig,
    /// The model whose absorption time is measured.
    model: DecrementModel,
    /// Renewal model of the limiting step law (additive chain runs only).
    renewal: Option<DecrementModel>,
    mult_eta: Option<EtaLaw>,
    limits: RegimeLimits,
    grid: Vec<u64>,
    states: Vec<u64>,
    clause: Clause,
    p: u8,
    m: usize,
    seed: u64,
    groups: usize,
}

impl Plan {
    fn new(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let chain = DecrementModel::from_name(&cfg.model, &cfg.params)?;
        let limits = chain.limits().clone();
        let p = cfg.p.unwrap_or(1);
        if p != 1 && p != 2 {
            return Err(config(format!("p = {p} is not supported (1 or 2)")));
        }
        let clause = match (cfg.clause, cfg.normalization) {
            (Some(c), NormalizationMode::Moments) => c,
            (None, NormalizationMode::Moments) => Clause::A,
            (Some(c), NormalizationMode::Theorem) => {
                if !limits.clauses().contains(&c) {
                    return Err(config(format!(
                        "clause {c:?} does not apply to {} (available: {:?})",
                        chain.name(),
                        limits.clauses()
                    )));
                }
                c
            }
            (None, NormalizationMode::Theorem) => *limits.clauses().first().ok_or_else(|| {
                config(format!(
                    "no limit theorem applies to {}; use normalization = moments",
                    chain.name()
                ))
            })?,
        };
        let (model, renewal, mult_eta) = match (cfg.target, &limits) {
            (Target::Chain, RegimeLimits::Add(_))
                if matches!(chain.spec(), ModelSpec::Renewal { .. }) =>
            {
                (chain.clone(), None, None)
            }
            (Target::Chain, RegimeLimits::Add(l)) => (
                chain.clone(),
                Some(DecrementModel::renewal(l.xi.clone())?),
                None,
            ),
            (Target::Chain, RegimeLimits::Mult(_)) => (chain.clone(), None, None),
            (Target::Renewal, RegimeLimits::Add(l)) => {
                (DecrementModel::renewal(l.xi.clone())?, None, None)
            }
            (Target::Renewal, RegimeLimits::Mult(l)) => {
                if cfg.method == Method::Exact {
                    return Err(config(
                        "the multiplicative renewal count is only available with method = mc",
                    ));
                }
                (chain.clone(), None, Some(l.eta))
            }
        };
        let grid = cfg
            .grid
            .clone()
            .unwrap_or_else(|| GridSpec::default_for(limits.regime()))
            .values()?;
        let offset = if mult_eta.is_some() {
            0
        } else {
            model.offset()
        };
        let states: Vec<u64> = grid.iter().map(|&n| n.saturating_sub(offset)).collect();
        if let Some(pos) = states.iter().position(|&s| s < 2) {
            return Err(config(format!(
                "grid value {} is too small for {}",
                grid[pos],
                chain.name()
            )));
        }
        let m = cfg.mc_samples.unwrap_or(DEFAULT_MC_SAMPLES);
        let seed = match cfg.method {
            Method::Exact => cfg.seed.unwrap_or(0),
            Method::Mc => {
                if m < MIN_MC_SAMPLES {
                    return Err(config(format!(
                        "mc_samples = {m} is below {MIN_MC_SAMPLES}"
                    )));
                }
                cfg.seed
                    .ok_or_else(|| config("a seed is mandatory with method = mc"))?
            }
        };
        if let Some(b) = cfg.budget {
            if !(0.0..1.0).contains(&b) {
                return Err(config(format!("budget {b} is outside [0, 1)")));
            }
        }
        let groups = cfg.jackknife_groups.unwrap_or(DEFAULT_JACKKNIFE_GROUPS);
        if groups < 2 || groups > m {
            return Err(config(format!(
                "jackknife_groups = {groups} must be in [2, mc_samples]"
            )));
        }
        Ok(Plan {
            cfg: cfg.clone(),
            model,
            renewal,
            mult_eta,
            limits,
            grid,
            states,
            clause,
            p,
            m,
            seed,
            groups,
        })
    }

    fn s_max(&self) -> u64 {
        *self.states.last().expect("grid is nonempty")
    }

    fn table(&self, model: &DecrementModel) -> Result<AbsorptionTable, ExperimentError> {
        let s = self.s_max();
        let budget = self.cfg.budget.unwrap_or_else(|| default_budget(s));
        match &self.cfg.cache_dir {
            Some(dir) => TableCache::new(dir)
                .get_or_build(model, s, budget)
                .map_err(numeric),
            None => AbsorptionTable::build(model, s, budget).map_err(numeric),
        }
    }

    /// `(a_n, b_n, limit law, c)` at state `s`; `mv` supplies the mean and
    /// variance for moment normalization.
    fn normalization(
        &self,
        s: u64,
        mv: (f64, f64),
    ) -> Result<(f64, f64, LimitLaw, f64), ExperimentError> {
        let t = match self.limits.regime() {
            Regime::Add => s as f64,
            Regime::Mult => (s as f64).ln(),
        };
        match self.cfg.normalization {
            NormalizationMode::Theorem => {
                let z =
                    theorem_normalization(&self.limits, s as f64, self.clause).map_err(numeric)?;
                Ok((z.a_n, z.b_n, z.law, z.c.unwrap_or(t.sqrt())))
            }
            NormalizationMode::Moments => {
                let sd = mv.1.sqrt();
                if !(sd > 0.0) {
                    return Err(numeric(format!("degenerate law at state {s}")));
                }
                Ok((mv.0, sd, LimitLaw::normal(), t.sqrt()))
            }
        }
    }

    fn gap(&self, s: u64) -> Result<f64, ExperimentError> {
        if self.mult_eta.is_some() {
            return Ok(0.0);
        }
        Ok(coupling_gap(&self.model, s, self.p)?.value)
    }
}

/// Runs the experiment; `on_row` sees each row as soon as it is computed.
pub fn run_convergence(
    cfg: &ExperimentConfig,
    mut on_row: impl FnMut(&ConvergenceRow) -> Result<(), ExperimentError>,
) -> Result<ConvergenceReport, ExperimentError> {
    let plan = Plan::new(cfg)?;
    let mut rows = Vec::with_capacity(plan.grid.len());
    match cfg.method {
        Method::Exact => {
            let t0 = Instant::now();
            let table = plan.table(&plan.model)?;
            let ntable = plan.renewal.as_ref().map(|r| plan.table(r)).transpose()?;
            let mut setup = Some(t0.elapsed());
            for (&n, &s) in plan.grid.iter().zip(&plan.states) {
                let start = Instant::now();
                let law = table.lattice(s).map_err(numeric)?;
                let (a, b, limit, c) = plan.normalization(s, moments(law.atoms(), law.masses()))?;
                let view = law.affine(a, b).map_err(numeric)?;
                let d = dp_discrete_vs_continuous(&view, &limit, plan.p).map_err(numeric)?;
                let d_tn_nn = match &ntable {
                    Some(nt) => {
                        let nlaw = nt.lattice(s).map_err(numeric)?;
                        Some(dp_discrete(&law, &nlaw, plan.p).map_err(numeric)?.value)
                    }
                    None => None,
                };
                let elapsed = start.elapsed() + setup.take().unwrap_or_default();
                let row = finish_row(
                    &plan,
                    n,
                    s,
                    a,
                    b,
                    d.value,
                    d.error_bound,
                    c,
                    d_tn_nn,
                    elapsed,
                )?;
                on_row(&row)?;
                rows.push(row);
            }
        }
        Method::Mc => {
            let t0 = Instant::now();
            let sampler = match plan.mult_eta {
                Some(_) => None,
                None => Some(ChainSampler::new(&plan.model, plan.s_max()).map_err(numeric)?),
            };
            let nsampler = plan
                .renewal
                .as_ref()
                .map(|r| ChainSampler::new(r, plan.s_max()))
                .transpose()
                .map_err(numeric)?;
            let mut setup = Some(t0.elapsed());
            for (&n, &s) in plan.grid.iter().zip(&plan.states) {
                let start = Instant::now();
                let seed = derive_seed(plan.seed, n, 0);
                let samples = match (&sampler, &plan.mult_eta) {
                    (Some(sm), _) => simulate_batch(sm, s, plan.m, seed).map_err(numeric)?,
                    (None, Some(eta)) => mult_count_batch(eta, n as f64, plan.m, seed),
                    (None, None) => unreachable!("a sampler exists for every target"),
                };
                let xs: Vec<f64> = samples.iter().map(|&t| t as f64).collect();
                let mf = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / mf;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (mf - 1.0);
                let (a, b, limit, c) = plan.normalization(s, (mean, var))?;
                let z: Vec<f64> = xs.iter().map(|x| (x - a) / b).collect();
                let (rep, se) =
                    jackknife_empirical(&z, &limit, plan.p, plan.groups).map_err(numeric)?;
                if let Some(max) = cfg.max_error {
                    if se > max {
                        return Err(numeric(format!(
                            "Monte Carlo error {se:e} at n = {n} exceeds max_error {max:e}; raise mc_samples"
                        )));
                    }
                }
                let d_tn_nn = match &nsampler {
                    Some(ns) => {
                        let other = simulate_batch(ns, s, plan.m, derive_seed(plan.seed, n, 1))
                            .map_err(numeric)?;
                        Some(dp_two_sample(&samples, &other, plan.p)?)
                    }
                    None => None,
                };
                let elapsed = start.elapsed() + setup.take().unwrap_or_default();
                let row = finish_row(&plan, n, s, a, b, rep.value, se, c, d_tn_nn, elapsed)?;
                on_row(&row)?;
                rows.push(row);
            }
        }
    }
    let summary = summarize(&plan, &rows);
    Ok(ConvergenceReport { rows, summary })
}

#[allow(clippy::too_many_arguments)]
fn finish_row(
    plan: &Plan,
    n: u64,
    s: u64,
    a: f64,
    b: f64,
    d: f64,
    err: f64,
    c: f64,
    d_tn_nn: Option<f64>,
    elapsed: std::time::Duration,
) -> Result<ConvergenceRow, ExperimentError> {
    if !(d >= 0.0 && d.is_finite() && err >= 0.0 && err.is_finite()) {
        return Err(numeric(format!(
            "distance {d} with error bound {err} at n = {n}"
        )));
    }
    Ok(ConvergenceRow {
        n,
        a_n: a,
        b_n: b,
        d_value: d,
        d_error_bound: err,
        coupling_gap: plan.gap(s)?,
        c_of_n: c,
        d_tn_nn,
        runtime_ms: plan.cfg.timings.then_some(elapsed.as_secs_f64() * 1e3),
    })
}

fn summarize(plan: &Plan, rows: &[ConvergenceRow]) -> Summary {
    let d: Vec<f64> = rows.iter().map(|r| r.d_value).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.d_error_bound).collect();
    let d_trend = Trend::new(&d, (plan.cfg.method == Method::Mc).then_some(&errs[..]));
    let tn: Option<Vec<f64>> = rows
        .iter()
        .map(|r| r.d_tn_nn.map(|v| v / r.c_of_n))
        .collect();
    let gap: Vec<f64> = rows
        .iter()
        .zip(&plan.states)
        .map(|(r, &s)| {
            let t = match plan.limits.regime() {
                Regime::Add => s as f64,
                Regime::Mult => (s as f64).ln(),
            };
            r.coupling_gap * t / r.c_of_n
        })
        .collect();
    Summary {
        model: plan.cfg.model.clone(),
        params: plan.cfg.params.clone(),
        regime: plan.limits.regime(),
        clause: plan.clause,
        normalization: plan.cfg.normalization,
        target: plan.cfg.target,
        method: plan.cfg.method,
        p: plan.p,
        grid: plan.grid.clone(),
        converged: d_trend.decreasing(),
        d: d_trend,
        tn_nn_ratio: tn.map(|v| Trend::new(&v, None)),
        gap_ratio: Trend::new(&gap, None),
    }
}

/// Problem for the `bounds` command: an explicit recursion or the coupling
/// instance of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default)]
    pub problem: Option<ExplicitProblem>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "empty_params")]
    pub params: Value,
    #[serde(default)]
    pub p: Option<u8>,
    #[serde(default)]
    pub psi: Option<PsiChoice>,
    pub n: usize,
    #[serde(default)]
    pub options: BoundOptions,
}

pub fn run_bounds(cfg: &BoundsConfig) -> Result<BoundReport, ExperimentError> {
    let prob = match (&cfg.problem, &cfg.model) {
        (Some(e), None) => RecursionProblem::from_explicit(e.clone()).map_err(config)?,
        (None, Some(name)) => {
            let model = DecrementModel::from_name(name, &cfg.params)?;
            RecursionProblem::coupling_instance(
                &model,
                cfg.p.unwrap_or(1),
                cfg.psi.unwrap_or(PsiChoice::N),
            )
            .map_err(config)?
        }
        _ => return Err(config("give exactly one of an explicit problem or a model")),
    };
    bound_ratio(&prob, cfg.n, cfg.options).map_err(|e| match e {
        crate::bounds::BoundsError::ShortHorizon { .. }
        | crate::bounds::BoundsError::ShortRange { .. } => config(e),
        other => numeric(other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn barrier(grid: Vec<u64>, p: u8) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            "barrier_walk",
            json!({"zeta": {"kind": "uniform", "lo": 1, "hi": 3}}),
        );
        c.grid = Some(GridSpec::List(grid));
        c.p = Some(p);
        c
    }

    #[test]
    fn grids() {
        let g = GridSpec::Log {
            log: GridRange {
                from: 4.0,
                to: 12.0,
                points: 5,
            },
        };
        assert_eq!(g.values().unwrap(), vec![55, 403, 2981, 22026, 162755]);
        let g = GridSpec::Geometric {
            geometric: GridRange {
                from: 100.0,
                to: 10_000.0,
                points: 3,
            },
        };
        assert_eq!(g.values().unwrap(), vec![100, 1000, 10000]);
        assert!(GridSpec::List(vec![5, 5]).values().is_err());
        let g: GridSpec =
            serde_json::from_str(r#"{"log": {"from": 6, "to": 12, "points": 3}}"#).unwrap();
        assert_eq!(g.values().unwrap(), vec![403, 8103, 162755]);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman_vs_index(&[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman_vs_index(&[1.0, 2.0, 3.0]), 1.0);
        assert!(spearman_vs_index(&[1.0, 1.0]).is_nan());
        assert!((spearman_vs_index(&[1.0, 3.0, 2.0, 0.0]) + 0.4).abs() < 1e-12);
    }

    #[test]
    fn config_errors() {
        let mut c = barrier(vec![10, 20], 1);
        c.method = Method::Mc;
        let err = run_convergence(&c, |_| Ok(())).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        c.seed = Some(1);
        c.mc_samples = Some(999);
        assert_eq!(run_convergence(&c, |_| Ok(())).unwrap_err().exit_code(), 2);
        let mut c = barrier(vec![10, 20], 1);
        c.clause = Some(Clause::C);
        assert_eq!(run_convergence(&c, |_| Ok(())).unwrap_err().exit_code(), 2);
        let c = ExperimentConfig::new("simple_chain", json!({}));
        assert_eq!(run_convergence(&c, |_| Ok(())).unwrap_err().exit_code(), 2);
        assert!(ExperimentConfig::from_json(r#"{"model": "simple_chain", "bogus": 1}"#).is_err());
    }

    #[test]
    fn exact_rows_are_deterministic_and_flushed() {
        let c = barrier(vec![50, 100, 200], 2);
        let mut seen = 0;
        let rep = run_convergence(&c, |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 3);
        let again = run_convergence(&c, |_| Ok(())).unwrap();
        assert_eq!(rep.rows, again.rows);
        assert_eq!(
            serde_json::to_string(&rep.summary).unwrap(),
            serde_json::to_string(&again.summary).unwrap()
        );
        for r in &rep.rows {
            assert!(r.d_value >= 0.0 && r.d_error_bound.is_finite() && r.runtime_ms.is_none());
            assert!(r.d_tn_nn.unwrap() >= 0.0);
        }
        assert!(rep.summary.d.strictly_decreasing);
        let mut w = RowWriter::new(Vec::new(), Format::Csv, false);
        rep.rows.iter().for_each(|r| w.write_row(r).unwrap());
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn cached_run_matches_fresh_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = barrier(vec![30, 60], 1);
        let fresh = run_convergence(&c, |_| Ok(())).unwrap();
        c.cache_dir = Some(dir.path().to_path_buf());
        let first = run_convergence(&c, |_| Ok(())).unwrap();
        let hit = run_convergence(&c, |_| Ok(())).unwrap();
        assert_eq!(fresh.rows, first.rows);
        assert_eq!(first.rows, hit.rows);
        assert_eq!(TableCache::new(dir.path()).list().unwrap().len(), 2);
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let mut c = barrier(vec![200], 1);
        let exact = run_convergence(&c, |_| Ok(())).unwrap().rows[0].clone();
        c.method = Method::Mc;
        c.seed = Some(17);
        c.mc_samples = Some(20_000);
        let mc = run_convergence(&c, |_| Ok(())).unwrap().rows[0].clone();
        assert!(
            (mc.d_value - exact.d_value).abs() < 3.0 * mc.d_error_bound + 0.01,
            "{} vs {} ± {}",
            mc.d_value,
            exact.d_value,
            mc.d_error_bound
        );
        assert_eq!(mc, run_convergence(&c, |_| Ok(())).unwrap().rows[0]);
    }

    #[test]
    fn simple_chain_moments_does_not_converge() {
        let mut c = ExperimentConfig::new("simple_chain", json!({}));
        c.normalization = NormalizationMode::Moments;
        c.grid = Some(GridSpec::List(vec![100, 1000, 4000]));
        let rep = run_convergence(&c, |_| Ok(())).unwrap();
        assert!(!rep.summary.converged);
        // uniform(-sqrt 3, sqrt 3) vs N(0, 1)
        for r in &rep.rows {
            assert!(r.d_value > 0.05, "{}", r.d_value);
        }
    }

    #[test]
    fn two_sample_distance() {
        assert_eq!(dp_two_sample(&[1, 2, 3], &[2, 3, 4], 1).unwrap(), 1.0);
        assert_eq!(
            dp_two_sample(&[0, 0], &[0, 3, 3, 0], 2).unwrap(),
            (4.5f64).sqrt()
        );
        let big: Vec<u64> = (0..100_000).map(|i| i % 3).collect();
        let shifted: Vec<u64> = big.iter().map(|x| x + 1).collect();
        assert!((dp_two_sample(&big, &shifted, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_config() {
        let cfg: BoundsConfig = serde_json::from_str(
            r#"{"model": "barrier_walk", "params": {"zeta": {"kind": "uniform", "lo": 1, "hi": 3}}, "n": 200}"#,
        )
        .unwrap();
        let rep = run_bounds(&cfg).unwrap();
        assert!(rep.bounded);
        let both: BoundsConfig = serde_json::from_str(
            r#"{"model": "simple_chain", "problem": {"a":0,"init":[0],"rows":[[1]],"r":[1],"psi":[1]}, "n": 1}"#,
        )
        .unwrap();
        assert_eq!(run_bounds(&both).unwrap_err().exit_code(), 2);
    }
}
