//! Python bindings. Reports cross the boundary as plain dicts and lists built from
//! the same JSON the command-line tool writes; non-finite numbers become `None`.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use voltreg::central::{solve_and_classify, CentralSettings};
use voltreg::cli::scenario::{run_scenario, Irradiance, Scenario};
use voltreg::dualnet::{self, run_distributed_from, Channel, PerfectChannel, RunConfig};
use voltreg::flowgeom::{self, brute_force_oracle, check_theorem_conditions, OracleSettings};
use voltreg::netmodel::{load_network, load_network_file, NetworkTree};
use voltreg::simharness::{self, run_loss_experiment, FeederSpec, LossyChannel};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Radial network loaded from a network document.
#[pyclass(name = "Network", module = "pyvoltreg", from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: NetworkTree,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_network_file(path).map_err(value_error)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: load_network(text).map_err(value_error)? })
    }

    /// 5-8 bus synthetic feeder with consumer loads.
    #[staticmethod]
    fn random_feeder(buses: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: simharness::random_feeder(&FeederSpec::new(buses), seed).map_err(value_error)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.to_document()).map_err(value_error)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn name(&self) -> Option<String> {
        self.inner.name.clone()
    }

    /// Exactness conditions per line and per non-root bus.
    fn check(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &check_theorem_conditions(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!("Network(n={}, lines={})", self.inner.n(), self.inner.lines().len())
    }
}

/// Result of a distributed run; pass it as `hot_start` to resume from its multipliers.
#[pyclass(name = "DistributedReport", module = "pyvoltreg")]
struct PyReport {
    inner: dualnet::SolveReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn primal_objective(&self) -> f64 {
        self.inner.primal_objective
    }

    #[getter]
    fn recovered_loss(&self) -> Option<f64> {
        self.inner.recovered_loss
    }

    #[getter]
    fn status(&self) -> PyResult<String> {
        let v = serde_json::to_value(self.inner.status).map_err(value_error)?;
        Ok(v["kind"].as_str().unwrap_or_default().to_string())
    }

    #[getter]
    fn voltages(&self) -> Option<Vec<Complex64>> {
        self.inner.voltages.clone()
    }

    fn rounds_to_gap(&self, reference: f64, rel: f64) -> Option<usize> {
        self.inner.rounds_to_gap(reference, rel)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("DistributedReport(converged={}, iterations={}, objective={})", self.inner.converged, self.inner.iterations, self.inner.objective)
    }
}

fn config(max_iters: usize, delta: Option<f64>, alpha0: Option<f64>, enhance_direction: bool, leaf_fix: bool, hot_start: bool) -> PyResult<RunConfig> {
    let mut cfg = RunConfig { max_iters, enhance_direction, leaf_fix, hot_start, ..RunConfig::default() };
    if let Some(d) = delta {
        cfg.delta = d;
    }
    if let Some(a) = alpha0 {
        cfg.alpha0 = a;
    }
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

fn channel(loss_prob: f64, seed: u64) -> PyResult<Box<dyn Channel + Send>> {
    if loss_prob == 0.0 {
        return Ok(Box::new(PerfectChannel));
    }
    Ok(Box::new(LossyChannel::new(loss_prob, seed).map_err(value_error)?))
}

/// Centralized relaxation and classification.
#[pyfunction]
fn solve(py: Python<'_>, net: &PyNetwork) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| solve_and_classify(&net.inner, &CentralSettings::default())).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (net, *, loss_prob = 0.0, seed = 0, max_iters = 300, delta = None, alpha0 = None, enhance_direction = false, leaf_fix = false, hot_start = None))]
#[allow(clippy::too_many_arguments)]
fn dsolve(
    py: Python<'_>,
    net: &PyNetwork,
    loss_prob: f64,
    seed: u64,
    max_iters: usize,
    delta: Option<f64>,
    alpha0: Option<f64>,
    enhance_direction: bool,
    leaf_fix: bool,
    hot_start: Option<PyRef<'_, PyReport>>,
) -> PyResult<PyReport> {
    let cfg = config(max_iters, delta, alpha0, enhance_direction, leaf_fix, hot_start.is_some())?;
    let init = hot_start.map(|r| dualnet::hot_start(&r.inner, &net.inner)).transpose().map_err(value_error)?;
    let mut ch = channel(loss_prob, seed)?;
    let net = net.inner.clone();
    let inner = py.detach(move || run_distributed_from(&net, &cfg, ch.as_mut(), init)).map_err(value_error)?;
    Ok(PyReport { inner })
}

/// Exhaustive angle-grid search for trees of at most five buses.
#[pyfunction]
#[pyo3(signature = (net, grid = 2001))]
fn oracle(py: Python<'_>, net: &PyNetwork, grid: usize) -> PyResult<Py<PyAny>> {
    let settings = OracleSettings { grid_points_per_line: grid, ..OracleSettings::default() };
    let r = py.detach(|| brute_force_oracle(&net.inner, &settings)).map_err(value_error)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (net, loss_probs, seeds, *, max_iters = 300, enhance_direction = false))]
fn loss_experiment(py: Python<'_>, net: &PyNetwork, loss_probs: Vec<f64>, seeds: Vec<u64>, max_iters: usize, enhance_direction: bool) -> PyResult<Py<PyAny>> {
    let cfg = config(max_iters, None, None, enhance_direction, false, false)?;
    let e = py.detach(|| run_loss_experiment(&net.inner, &cfg, &loss_probs, &seeds)).map_err(value_error)?;
    to_py(py, &e)
}

/// Per-minute replay of a nominal network under an irradiance series.
#[pyfunction]
#[pyo3(signature = (net, irradiance = None, *, minutes = 60, start = 377, seed = 0, horizon = None, hot_start = true, loss_prob = 0.0))]
#[allow(clippy::too_many_arguments)]
fn scenario(
    py: Python<'_>,
    net: &PyNetwork,
    irradiance: Option<&str>,
    minutes: u32,
    start: u32,
    seed: u64,
    horizon: Option<(u32, u32)>,
    hot_start: bool,
    loss_prob: f64,
) -> PyResult<Py<PyAny>> {
    let series = match irradiance {
        Some(p) => Irradiance::load(p).map_err(value_error)?,
        None => Irradiance::synthetic(start, minutes, seed),
    };
    let mut sc = Scenario::new(net.inner.clone(), series);
    sc.horizon = horizon;
    let cfg = config(300, None, None, false, false, hot_start)?;
    let mut ch = channel(loss_prob, seed)?;
    let rows = py.detach(move || run_scenario(&sc, &cfg, ch.as_mut())).map_err(value_error)?;
    to_py(py, &rows)
}

/// `(P_ik, P_ki, Q_ik, Q_ki)` of a line at angle difference `theta`.
#[pyfunction]
fn line_flow(g: f64, b: f64, theta: f64) -> (f64, f64, f64, f64) {
    let f = flowgeom::line_flow(g, b, theta);
    (f.p_ik, f.p_ki, f.q_ik, f.q_ki)
}

#[pyfunction]
fn ellipse_map(g: f64, b: f64) -> [[f64; 2]; 2] {
    flowgeom::ellipse_map(g, b)
}

#[pyfunction]
#[pyo3(signature = (g, b, p_flow_max = f64::INFINITY, loss_max = f64::INFINITY))]
fn angle_bounds<'py>(py: Python<'py>, g: f64, b: f64, p_flow_max: f64, loss_max: f64) -> PyResult<Bound<'py, PyDict>> {
    let ab = flowgeom::angle_bounds(g, b, p_flow_max, loss_max).map_err(value_error)?;
    let d = PyDict::new(py);
    d.set_item("theta_p", ab.theta_p)?;
    d.set_item("theta_l", ab.theta_l)?;
    d.set_item("theta_bar", ab.theta_bar)?;
    d.set_item("theta_tilde", ab.theta_tilde)?;
    Ok(d)
}

#[pymodule]
fn pyvoltreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(dsolve, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(loss_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(scenario, m)?)?;
    m.add_function(wrap_pyfunction!(line_flow, m)?)?;
    m.add_function(wrap_pyfunction!(ellipse_map, m)?)?;
    m.add_function(wrap_pyfunction!(angle_bounds, m)?)?;
    Ok(())
}
