//! Python bindings: grids, nodal profiles, pulse ensembles with the
//! scaling energy `Φ_β`, and the coupled solver.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use nodalsep_core::config::ExperimentConfig;
use nodalsep_core::coupled::{continuation, Stage};
use nodalsep_core::nehari::{self, PulseEnsemble};
use nodalsep_core::scalar::{self, NodalProfile};
use nodalsep_core::{build_assignment, Error, RadialField, RadialGrid};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    if e.is_config() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn fields(grid: &Arc<RadialGrid>, values: Vec<Vec<f64>>) -> PyResult<Vec<RadialField>> {
    values
        .into_iter()
        .map(|v| RadialField::new(grid.clone(), v).map_err(py_err))
        .collect()
}

#[pyclass(name = "RadialGrid", frozen)]
#[derive(Clone)]
struct PyGrid(Arc<RadialGrid>);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (dimension, n_points = 4096, r_max = 40.0))]
    fn new(dimension: usize, n_points: usize, r_max: f64) -> PyResult<Self> {
        nodalsep_core::build_grid(dimension, n_points, r_max).map(PyGrid).map_err(py_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.0.n_points()
    }

    #[getter]
    fn r_max(&self) -> f64 {
        self.0.r_max()
    }

    #[getter]
    fn dr(&self) -> f64 {
        self.0.dr()
    }

    fn nodes(&self) -> Vec<f64> {
        self.0.nodes().to_vec()
    }

    fn weights(&self) -> Vec<f64> {
        self.0.quad_weights().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "RadialGrid(dimension={}, n_points={}, r_max={})",
            self.0.dimension(),
            self.0.n_points(),
            self.0.r_max()
        )
    }
}

#[pyclass(name = "NodalProfile", frozen)]
struct PyProfile(NodalProfile);

#[pymethods]
impl PyProfile {
    #[getter]
    fn h(&self) -> usize {
        self.0.h
    }

    #[getter]
    fn c_value(&self) -> f64 {
        self.0.c_value
    }

    #[getter]
    fn node_radii(&self) -> Vec<f64> {
        self.0.node_radii.clone()
    }

    #[getter]
    fn energies(&self) -> Vec<f64> {
        self.0.energies.clone()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid.clone())
    }

    fn bumps(&self) -> Vec<Vec<f64>> {
        self.0.bumps.iter().map(|b| b.values().to_vec()).collect()
    }

    fn signed_solution(&self) -> Vec<f64> {
        self.0.signed_reconstruction()
    }

    fn nehari_defect(&self) -> f64 {
        self.0.nehari_defect()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.summary())
    }
}

/// Optimal `h`-bump partition of the radial domain.
#[pyfunction]
fn compute_c_infinity(py: Python<'_>, grid: &PyGrid, h: usize) -> PyResult<PyProfile> {
    let g = grid.0.clone();
    py.allow_threads(|| scalar::compute_c_infinity(&g, h))
        .map(PyProfile)
        .map_err(py_err)
}

/// Shooting + Newton route to the `h`-bump nodal solution.
#[pyfunction]
fn find_nodal_solution(py: Python<'_>, grid: &PyGrid, h: usize) -> PyResult<PyProfile> {
    let g = grid.0.clone();
    py.allow_threads(|| scalar::find_nodal_solution(&g, h))
        .map(PyProfile)
        .map_err(py_err)
}

#[pyclass(name = "PulseEnsemble", frozen)]
struct PyEnsemble(PulseEnsemble);

#[pymethods]
impl PyEnsemble {
    /// `pulses` are listed in bump order (outwards from the origin).
    #[new]
    fn new(grid: &PyGrid, sigma: Vec<i64>, pulses: Vec<Vec<f64>>) -> PyResult<Self> {
        let asg = build_assignment(&sigma).map_err(py_err)?;
        if pulses.len() != asg.h() {
            return Err(py_err(Error::ShapeMismatch {
                expected: asg.h(),
                got: pulses.len(),
            }));
        }
        let bumps = fields(&grid.0, pulses)?;
        let ordered = asg.pulse_bumps().iter().map(|&l| bumps[l].clone()).collect();
        PulseEnsemble::new(grid.0.clone(), asg, ordered).map(PyEnsemble).map_err(py_err)
    }

    /// Pulses taken from the bumps of `profile`.
    #[staticmethod]
    fn from_profile(profile: &PyProfile, sigma: Vec<i64>) -> PyResult<Self> {
        let p = &profile.0;
        Self::new(&PyGrid(p.grid.clone()), sigma, p.bumps.iter().map(|b| b.values().to_vec()).collect())
    }

    #[getter]
    fn h(&self) -> usize {
        self.0.h()
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    fn components(&self) -> Vec<Vec<f64>> {
        self.0.components().into_iter().map(|c| c.into_values()).collect()
    }

    fn phi(&self, beta: f64, lam: Vec<f64>) -> PyResult<f64> {
        nehari::phi(beta, &self.0, &lam).map_err(py_err)
    }

    fn grad_phi(&self, beta: f64, lam: Vec<f64>) -> PyResult<Vec<f64>> {
        nehari::grad_phi(beta, &self.0, &lam).map_err(py_err)
    }

    fn hess_phi(&self, beta: f64, lam: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let m = nehari::hess_phi(beta, &self.0, &lam).map_err(py_err)?;
        Ok(m.row_iter().map(|r| r.iter().cloned().collect()).collect())
    }

    fn maximize<'py>(&self, py: Python<'py>, beta: f64) -> PyResult<Bound<'py, PyAny>> {
        let rep = nehari::maximize_phi(beta, &self.0).map_err(py_err)?;
        to_py(py, &rep)
    }

    #[pyo3(signature = (beta, starts = 32, radius = 2.0, seed = 0))]
    fn multistart<'py>(&self, py: Python<'py>, beta: f64, starts: usize, radius: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let reps = py
            .allow_threads(|| nehari::multistart(beta, &self.0, starts, radius, seed))
            .map_err(py_err)?;
        to_py(py, &reps)
    }

    fn distance(&self, profile: &PyProfile) -> PyResult<f64> {
        nodalsep_core::diagnostics::d_sigma_distance(&self.0, &profile.0).map_err(py_err)
    }
}

#[pyclass(name = "ExperimentConfig")]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    /// Keyword arguments override the defaults; unknown keys are rejected.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let Some(kw) = kwargs else {
            return Ok(PyConfig(ExperimentConfig::default()));
        };
        let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
        ExperimentConfig::from_json(&text).map(PyConfig).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(PyConfig).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    #[pyo3(signature = (coupled = true))]
    fn validate(&self, coupled: bool) -> PyResult<()> {
        self.0.validate(coupled).map_err(py_err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig({})", serde_json::to_string(&self.0).unwrap_or_default())
    }
}

fn stages_to_py<'py>(py: Python<'py>, stages: &[Stage]) -> PyResult<Vec<Bound<'py, PyAny>>> {
    stages
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("beta", s.beta)?;
            match &s.outcome {
                Ok(rec) => {
                    d.set_item("record", to_py(py, &rec.summary())?)?;
                    let comps: Vec<Vec<f64>> = rec.components().into_iter().map(|c| c.into_values()).collect();
                    d.set_item("components", comps)?;
                    d.set_item("r", rec.ensemble.grid().nodes().to_vec())?;
                }
                Err(e) => {
                    d.set_item("error", e.kind())?;
                    d.set_item("message", e.to_string())?;
                }
            }
            Ok(d.into_any())
        })
        .collect()
}

fn run(py: Python<'_>, cfg: ExperimentConfig) -> PyResult<(f64, Vec<Stage>)> {
    py.allow_threads(move || {
        cfg.validate(true)?;
        let grid = cfg.grid()?;
        let profile = scalar::compute_c_infinity(&grid, cfg.h)?;
        let stages = continuation(&profile, &cfg.assignment()?, &cfg.solver())?;
        Ok((profile.c_value, stages))
    })
    .map_err(py_err)
}

/// Coupled solution at one `β`, started from the target profile.
#[pyfunction]
fn solve<'py>(py: Python<'py>, config: &PyConfig, beta: f64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig {
        beta_schedule: vec![beta],
        ..config.0.clone()
    };
    let (c_inf, stages) = run(py, cfg)?;
    let out = stages_to_py(py, &stages)?.remove(0);
    out.set_item("c_infinity", c_inf)?;
    if let Err(e) = &stages[0].outcome {
        return Err(py_err(e.clone()));
    }
    Ok(out)
}

/// Continuation over the schedule; failed stages carry `error` and `message`.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let (c_inf, stages) = run(py, config.0.clone())?;
    let d = PyDict::new(py);
    d.set_item("c_infinity", c_inf)?;
    d.set_item("stages", stages_to_py(py, &stages)?)?;
    Ok(d)
}

/// Max-norm residual of the coupled system.
#[pyfunction]
fn residual_max(grid: &PyGrid, beta: f64, components: Vec<Vec<f64>>) -> PyResult<f64> {
    nodalsep_core::diagnostics::residual_max(beta, &fields(&grid.0, components)?).map_err(py_err)
}

/// `J_β` of the given components.
#[pyfunction]
fn j_beta(grid: &PyGrid, beta: f64, components: Vec<Vec<f64>>) -> PyResult<f64> {
    nehari::j_beta(beta, &fields(&grid.0, components)?).map_err(py_err)
}

#[pymodule]
pub fn nodalsep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(compute_c_infinity, m)?)?;
    m.add_function(wrap_pyfunction!(find_nodal_solution, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(residual_max, m)?)?;
    m.add_function(wrap_pyfunction!(j_beta, m)?)?;
    Ok(())
}
