//! Python module `decchain`. States passed to [`Model`] methods are the
//! canonical states `s = n - offset`; experiment configs use labels `n`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

use decchain_core::absorb::{
    absorption_law, absorption_mean, default_budget, simulate_batch, ChainSampler,
};
use decchain_core::dist::{LatticeDist, StepLaw};
use decchain_core::experiment::{
    run_bounds, run_convergence, BoundsConfig, ExperimentConfig, ExperimentError,
};
use decchain_core::limits::{normal_cdf, theorem_normalization, Clause, StableLaw};
use decchain_core::models::{coupling_gap, DecrementModel, ModelError, Regime, REGISTRY};
use decchain_core::wasserstein::dp_discrete;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::InvalidParameter(_) | ModelError::UnknownModel(_) => value_err(e),
        other => runtime_err(other),
    }
}

fn experiment_err(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::Config(_) => value_err(e),
        other => runtime_err(other),
    }
}

fn to_json(obj: Option<&Bound<'_, PyAny>>) -> PyResult<Value> {
    match obj {
        None => Ok(Value::Object(Default::default())),
        Some(o) => {
            let text: String = o
                .py()
                .import("json")?
                .call_method1("dumps", (o,))?
                .extract()?;
            serde_json::from_str(&text).map_err(value_err)
        }
    }
}

fn from_json<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A decreasing Markov chain from the model registry.
#[pyclass(module = "decchain", frozen)]
struct Model {
    inner: DecrementModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let params = to_json(params)?;
        Ok(Model {
            inner: DecrementModel::from_name(name, &params).map_err(model_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn regime(&self) -> &'static str {
        match self.inner.regime() {
            Regime::Add => "add",
            Regime::Mult => "mult",
        }
    }

    /// Label of canonical state 0.
    #[getter]
    fn offset(&self) -> u64 {
        self.inner.offset()
    }

    /// `P(I = d)` for `d = 0..=s`.
    fn decrement_probs(&self, s: u64) -> PyResult<Vec<f64>> {
        self.inner.decrement_probs(s).map_err(model_err)
    }

    /// `(atoms, masses, pruned_mass)` of the absorption time from state `s`.
    #[pyo3(signature = (s, budget = None))]
    fn absorption_law(
        &self,
        py: Python<'_>,
        s: u64,
        budget: Option<f64>,
    ) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
        let budget = budget.unwrap_or_else(|| default_budget(s));
        let law = py
            .detach(|| absorption_law(&self.inner, s, budget))
            .map_err(runtime_err)?;
        Ok((
            law.atoms().to_vec(),
            law.masses().to_vec(),
            law.pruned_mass(),
        ))
    }

    fn absorption_mean(&self, s: u64) -> PyResult<f64> {
        absorption_mean(&self.inner, s).map_err(runtime_err)
    }

    /// `m` absorption times from state `s`, deterministic in `seed`.
    fn simulate(&self, py: Python<'_>, s: u64, m: usize, seed: u64) -> PyResult<Vec<u64>> {
        py.detach(|| {
            let sampler = ChainSampler::new(&self.inner, s)?;
            simulate_batch(&sampler, s, m, seed)
        })
        .map_err(runtime_err)
    }

    #[pyo3(signature = (s, p = 1))]
    fn coupling_gap(&self, s: u64, p: u8) -> PyResult<f64> {
        Ok(coupling_gap(&self.inner, s, p).map_err(model_err)?.value)
    }

    /// `{"a_n", "b_n", "c"}` for the given clause at state `s`.
    fn normalization<'py>(
        &self,
        py: Python<'py>,
        s: f64,
        clause: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let clause: Clause = clause.parse().map_err(value_err)?;
        let z = theorem_normalization(self.inner.limits(), s, clause).map_err(value_err)?;
        from_json(
            py,
            &serde_json::json!({"a_n": z.a_n, "b_n": z.b_n, "c": z.c}),
        )
    }

    fn __repr__(&self) -> String {
        format!("Model({:?})", self.inner.name())
    }
}

/// Names of the registered models.
#[pyfunction]
fn models() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

#[pyfunction]
fn stable_cdf(alpha: f64, x: f64) -> PyResult<f64> {
    StableLaw::new(alpha)
        .and_then(|l| l.cdf(x))
        .map_err(value_err)
}

#[pyfunction]
fn stable_quantile(alpha: f64, u: f64) -> PyResult<f64> {
    StableLaw::new(alpha)
        .and_then(|l| l.quantile(u))
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(name = "normal_cdf")]
fn py_normal_cdf(x: f64) -> f64 {
    normal_cdf(x)
}

/// Minimal `L^p` distance between two finite laws given as atoms and masses.
#[pyfunction]
#[pyo3(signature = (atoms_f, masses_f, atoms_g, masses_g, p = 1))]
fn distance(
    atoms_f: Vec<f64>,
    masses_f: Vec<f64>,
    atoms_g: Vec<f64>,
    masses_g: Vec<f64>,
    p: u8,
) -> PyResult<f64> {
    let f = LatticeDist::from_pairs(atoms_f.into_iter().zip(masses_f), 0.0).map_err(value_err)?;
    let g = LatticeDist::from_pairs(atoms_g.into_iter().zip(masses_g), 0.0).map_err(value_err)?;
    Ok(dp_discrete(&f, &g, p).map_err(value_err)?.value)
}

/// Runs a convergence experiment; returns `{"rows": [...], "summary": {...}}`.
#[pyfunction]
fn converge<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ExperimentConfig =
        serde_json::from_value(to_json(Some(config))?).map_err(value_err)?;
    let rep = py
        .detach(|| run_convergence(&cfg, |_| Ok(())))
        .map_err(experiment_err)?;
    from_json(py, &rep)
}

/// Solves a bounds problem; returns the full report.
#[pyfunction]
fn bounds<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: BoundsConfig = serde_json::from_value(to_json(Some(config))?).map_err(value_err)?;
    let rep = py.detach(|| run_bounds(&cfg)).map_err(experiment_err)?;
    from_json(py, &rep)
}

#[pymodule]
pub fn decchain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(models, m)?)?;
    m.add_function(wrap_pyfunction!(stable_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(stable_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(py_normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(converge, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    Ok(())
}
