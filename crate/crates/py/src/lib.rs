//! Python bindings: instances, mean-field analysis, optimization and
//! simulation runs. Simulations release the GIL while they run.

use std::path::Path;

use edgerep::adaptive::{AdaptiveConfig, EvictionRule};
use edgerep::harness::{self, RunOptions, ScenarioConfig};
use edgerep::meanfield::{self, FixedPointOptions, LossModel};
use edgerep::optimizer::{self, OptimizerMethod};
use edgerep::sim::{self, SimConfig, SimMetrics};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: edgerep::Error) -> PyErr {
    if err.is_config_error() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn parse_loss_model(name: &str) -> PyResult<LossModel> {
    match name {
        "exact" => Ok(LossModel::Exact),
        "closed_form" | "closed-form" => Ok(LossModel::ClosedForm),
        other => Err(PyValueError::new_err(format!("unknown loss model '{other}'"))),
    }
}

/// Per-content request rates.
#[pyclass(name = "Catalog", module = "edgerep", frozen)]
struct PyCatalog(edgerep::Catalog);

#[pymethods]
impl PyCatalog {
    #[new]
    fn new(popularities: Vec<f64>) -> PyResult<Self> {
        edgerep::Catalog::new(popularities).map(Self).map_err(to_py)
    }

    /// Zipf popularities `lambda_c ∝ c^(-alpha)` with mean `lambda_bar`.
    #[staticmethod]
    fn zipf(n: usize, alpha: f64, lambda_bar: f64) -> PyResult<Self> {
        edgerep::model::zipf_catalog(n, alpha, lambda_bar)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn popularities(&self) -> Vec<f64> {
        self.0.popularities().to_vec()
    }

    #[getter]
    fn lambda_bar(&self) -> f64 {
        self.0.lambda_bar()
    }

    #[getter]
    fn total_rate(&self) -> f64 {
        self.0.total_rate()
    }

    /// System parameters for `m` servers with `d` slots each.
    fn params(&self, m: usize, d: usize) -> PyResult<PySystemParams> {
        self.0.params(m, d).map(PySystemParams).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Catalog(n={}, lambda_bar={:.4})", self.0.len(), self.0.lambda_bar())
    }
}

#[pyclass(name = "SystemParams", module = "edgerep", frozen)]
struct PySystemParams(edgerep::SystemParams);

#[pymethods]
impl PySystemParams {
    #[new]
    fn new(n: usize, m: usize, d: usize, rho: f64) -> PyResult<Self> {
        edgerep::SystemParams::from_load(n, m, d, rho).map(Self).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }

    #[getter]
    fn lambda_bar(&self) -> f64 {
        self.0.lambda_bar
    }

    fn __repr__(&self) -> String {
        let p = self.0;
        format!("SystemParams(n={}, m={}, d={}, rho={})", p.n, p.m, p.d, p.rho)
    }
}

/// Replica counts per content.
#[pyclass(name = "ReplicationProfile", module = "edgerep", frozen)]
struct PyProfile(edgerep::ReplicationProfile);

#[pymethods]
impl PyProfile {
    #[new]
    #[pyo3(signature = (replicas, params, cap_fraction = edgerep::model::DEFAULT_CAP_FRACTION))]
    fn new(replicas: Vec<usize>, params: &PySystemParams, cap_fraction: f64) -> PyResult<Self> {
        edgerep::ReplicationProfile::new(replicas, &params.0, cap_fraction)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (catalog, params, cap_fraction = edgerep::model::DEFAULT_CAP_FRACTION))]
    fn proportional(catalog: &PyCatalog, params: &PySystemParams, cap_fraction: f64) -> PyResult<Self> {
        edgerep::model::proportional_replication(&catalog.0, &params.0, cap_fraction)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn replicas(&self) -> Vec<usize> {
        self.0.replicas().to_vec()
    }

    #[getter]
    fn total(&self) -> usize {
        self.0.total()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("ReplicationProfile(n={}, total={})", self.0.len(), self.0.total())
    }
}

#[pyclass(name = "MeanFieldSolution", module = "edgerep", frozen, get_all)]
struct PyMeanField {
    gamma_bar: f64,
    inefficiency: f64,
    rho_eff: f64,
    theta_eff: f64,
    gamma: Vec<f64>,
    gamma_closed: Vec<f64>,
    gamma_exact: Vec<f64>,
    iterations: usize,
    residual: f64,
}

#[pymethods]
impl PyMeanField {
    fn __repr__(&self) -> String {
        format!(
            "MeanFieldSolution(inefficiency={:.4e}, theta_eff={:.4})",
            self.inefficiency, self.theta_eff
        )
    }
}

impl From<meanfield::MeanFieldSolution> for PyMeanField {
    fn from(s: meanfield::MeanFieldSolution) -> Self {
        PyMeanField {
            gamma_bar: s.gamma_bar,
            inefficiency: s.inefficiency,
            rho_eff: s.effective.rho_eff,
            theta_eff: s.effective.theta_eff,
            gamma: s.gamma,
            gamma_closed: s.gamma_closed,
            gamma_exact: s.gamma_exact,
            iterations: s.iterations,
            residual: s.residual,
        }
    }
}

/// Mean-field fixed point for a static replication.
#[pyfunction]
#[pyo3(signature = (catalog, profile, params, loss_model = "exact"))]
fn solve_meanfield(
    catalog: &PyCatalog,
    profile: &PyProfile,
    params: &PySystemParams,
    loss_model: &str,
) -> PyResult<PyMeanField> {
    let opts = FixedPointOptions {
        loss_model: parse_loss_model(loss_model)?,
        ..FixedPointOptions::default()
    };
    meanfield::fixed_point_solve(&catalog.0, &profile.0, &params.0, &opts)
        .map(PyMeanField::from)
        .map_err(to_py)
}

/// Stationary law of the available replicas of one content, `probs[z]`.
#[pyfunction]
fn availability_distribution(lambda_c: f64, replicas: usize, theta_eff: f64) -> Vec<f64> {
    meanfield::availability_distribution(0, lambda_c, replicas, theta_eff).probs
}

#[pyfunction]
#[pyo3(signature = (lambda_c, replicas, theta_eff, loss_model = "exact"))]
fn loss_rate(lambda_c: f64, replicas: usize, theta_eff: f64, loss_model: &str) -> PyResult<f64> {
    Ok(parse_loss_model(loss_model)?.loss_rate(lambda_c, replicas, theta_eff))
}

#[pyfunction]
fn theta_from_load(rho_eff: f64, d: usize) -> f64 {
    meanfield::theta_from_load(rho_eff, d)
}

/// Optimized static replication. Returns the profile and the predicted
/// average loss rate.
#[pyfunction]
#[pyo3(signature = (catalog, params, method = "closed_form", two_pass = false, cap_fraction = edgerep::model::DEFAULT_CAP_FRACTION))]
fn optimize(
    catalog: &PyCatalog,
    params: &PySystemParams,
    method: &str,
    two_pass: bool,
    cap_fraction: f64,
) -> PyResult<(PyProfile, f64)> {
    let method = match method {
        "closed_form" | "closed-form" => OptimizerMethod::ClosedForm,
        "greedy" => OptimizerMethod::Greedy,
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    let report = optimizer::optimize(
        &catalog.0,
        &params.0,
        cap_fraction,
        method,
        two_pass,
        &FixedPointOptions::default(),
    )
    .map_err(to_py)?;
    Ok((PyProfile(report.profile), report.gamma_bar_predicted))
}

/// Counters and time averages of one simulation run.
#[pyclass(name = "SimResult", module = "edgerep", frozen)]
struct PySimResult(SimMetrics);

#[pymethods]
impl PySimResult {
    #[getter]
    fn inefficiency(&self) -> f64 {
        self.0.inefficiency()
    }

    #[getter]
    fn busy_fraction(&self) -> f64 {
        self.0.busy_fraction()
    }

    #[getter]
    fn arrivals(&self) -> Vec<u64> {
        self.0.arrivals.clone()
    }

    #[getter]
    fn losses(&self) -> Vec<u64> {
        self.0.losses.clone()
    }

    #[getter]
    fn virtual_losses(&self) -> Vec<u64> {
        self.0.virtual_losses.clone()
    }

    #[getter]
    fn final_replicas(&self) -> Vec<usize> {
        self.0.final_replicas.clone()
    }

    #[getter]
    fn events_processed(&self) -> u64 {
        self.0.events_processed
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    /// `(t, per-decile mean replicas)` pairs, most popular decile first.
    #[getter]
    fn snapshots(&self) -> Vec<(f64, Vec<f64>)> {
        self.0.snapshots.iter().map(|s| (s.t, s.decile_mean.clone())).collect()
    }

    fn loss_rate(&self, content: usize) -> PyResult<f64> {
        self.check(content)?;
        Ok(self.0.loss_rate(content))
    }

    fn z_mean(&self, content: usize) -> PyResult<f64> {
        self.check(content)?;
        Ok(self.0.z_mean(content))
    }

    fn z_distribution(&self, content: usize) -> PyResult<Vec<f64>> {
        self.check(content)?;
        Ok(self.0.z_distribution(content))
    }

    fn replicas_mean(&self, content: usize) -> PyResult<f64> {
        self.check(content)?;
        Ok(self.0.replicas_mean(content))
    }

    fn __repr__(&self) -> String {
        format!(
            "SimResult(inefficiency={:.4e}, busy_fraction={:.4})",
            self.0.inefficiency(),
            self.0.busy_fraction()
        )
    }
}

impl PySimResult {
    fn check(&self, content: usize) -> PyResult<()> {
        if content < self.0.contents() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("no content {content}")))
        }
    }
}

/// Simulates the loss network. With `rule` set ("random", "lrl" or "lfl")
/// the replication adapts to losses.
#[pyfunction]
#[pyo3(signature = (catalog, profile, params, horizon, seed = 1, warmup = None, rule = None, virtual_losses = false, snapshot_every = None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    catalog: &PyCatalog,
    profile: &PyProfile,
    params: &PySystemParams,
    horizon: f64,
    seed: u64,
    warmup: Option<f64>,
    rule: Option<&str>,
    virtual_losses: bool,
    snapshot_every: Option<f64>,
) -> PyResult<PySimResult> {
    let mut cfg = SimConfig::new(horizon, seed);
    if let Some(w) = warmup {
        cfg = cfg.with_warmup(w);
    }
    if let Some(rule) = rule {
        let rule: EvictionRule = rule.parse().map_err(to_py)?;
        cfg = cfg.with_adaptive(AdaptiveConfig::new(rule, virtual_losses));
    } else if virtual_losses {
        cfg = cfg.with_adaptive(AdaptiveConfig::frozen_virtual());
    }
    if let Some(every) = snapshot_every {
        cfg = cfg.with_snapshots(every);
    }
    let (cat, prof, par) = (catalog.0.clone(), profile.0.clone(), params.0);
    py.detach(move || sim::run(&cat, &prof, &par, cfg))
        .map(PySimResult)
        .map_err(to_py)
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    harness::preset_names().collect()
}

#[pyfunction]
fn preset_source(name: &str) -> PyResult<&'static str> {
    harness::preset_source(name).map_err(to_py)
}

/// Runs a scenario given as TOML text and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (toml_text, out = None, jobs = None, horizon = None))]
fn run_scenario(
    py: Python<'_>,
    toml_text: &str,
    out: Option<&str>,
    jobs: Option<usize>,
    horizon: Option<f64>,
) -> PyResult<String> {
    let mut config = ScenarioConfig::from_toml_str(toml_text, Path::new("<python>")).map_err(to_py)?;
    if let Some(h) = horizon {
        config = config.with_horizon(h).map_err(to_py)?;
    }
    let opts = RunOptions {
        jobs,
        out: out.map(Into::into),
        ..RunOptions::default()
    };
    let report = py
        .detach(move || harness::run_scenario(&config, &opts))
        .map_err(to_py)?
        .0;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "edgerep")]
fn edgerep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCatalog>()?;
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyMeanField>()?;
    m.add_class::<PySimResult>()?;
    m.add_function(wrap_pyfunction!(solve_meanfield, m)?)?;
    m.add_function(wrap_pyfunction!(availability_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(loss_rate, m)?)?;
    m.add_function(wrap_pyfunction!(theta_from_load, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset_source, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
