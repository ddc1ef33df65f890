//! Python bindings for the mean-field social control toolkit.
//!
//! A [`Problem`] wraps a validated problem description. The analysis functions take a
//! `Problem` and return JSON text with the same layout as the command-line outputs.

use mfsocial::linalg::{Matrix, Tolerance};
use mfsocial::model::{Horizon, ProblemSpec};
use mfsocial::riccati::{solve_are, solve_finite_limit, solve_finite_n};
use mfsocial::simulator::{simulate_population, SimConfig};
use mfsocial::social::{asymptotic_value, decentralized_law, gap_curve};
use mfsocial::stability;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn solver_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn tolerance(ode_step: Option<f64>) -> PyResult<Tolerance> {
    let tol = match ode_step {
        Some(h) => Tolerance::default().with_ode_step(h),
        None => Tolerance::default(),
    };
    tol.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(tol)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn horizon_t(spec: &ProblemSpec, t: Option<f64>) -> PyResult<f64> {
    match (spec.final_time(), t) {
        (Some(fin), Some(t)) if (fin - t).abs() > 1e-12 => Err(PyValueError::new_err(format!(
            "finite-horizon problem runs on [0, {fin}], got T = {t}"
        ))),
        (Some(fin), _) => Ok(fin),
        (None, Some(t)) => Ok(t),
        (None, None) => Err(PyValueError::new_err("infinite-horizon problem needs T")),
    }
}

/// Validated problem description.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Problem {
    spec: ProblemSpec,
}

#[pymethods]
impl Problem {
    /// Parse and validate a JSON problem description.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let spec = ProblemSpec::from_json(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { spec })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::new(&text)
    }

    fn to_json(&self) -> String {
        self.spec.to_json()
    }

    /// Copy with a different population size.
    fn with_agents(&self, n: usize) -> Self {
        Self { spec: self.spec.with_agents(n) }
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    #[getter]
    fn control_dim(&self) -> usize {
        self.spec.control_dim
    }

    #[getter]
    fn agents(&self) -> usize {
        self.spec.agents
    }

    /// Final time, or `None` on an infinite horizon.
    #[getter]
    fn horizon(&self) -> Option<f64> {
        match self.spec.horizon {
            Horizon::Finite(t) => Some(t),
            Horizon::Infinite => None,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n={}, r={}, N={}, horizon={:?})",
            self.spec.state_dim, self.spec.control_dim, self.spec.agents, self.spec.horizon
        )
    }
}

/// Stability, detectability and convexity report as JSON.
#[pyfunction]
#[pyo3(signature = (problem, ode_step=None))]
fn check(problem: &Problem, ode_step: Option<f64>) -> PyResult<String> {
    let rep = stability::check(&problem.spec, &tolerance(ode_step)?).map_err(solver_err)?;
    Ok(serde_json::to_string(&rep).expect("plain data"))
}

/// Finite-horizon Riccati solution as CSV; `agents` selects the population equations.
#[pyfunction]
#[pyo3(signature = (problem, agents=None, ode_step=None))]
fn solve_finite(problem: &Problem, agents: Option<usize>, ode_step: Option<f64>) -> PyResult<String> {
    let tol = tolerance(ode_step)?;
    let sol = match agents {
        Some(n) => solve_finite_n(&problem.spec.with_agents(n), &tol),
        None => solve_finite_limit(&problem.spec, &tol),
    }
    .map_err(solver_err)?;
    Ok(sol.to_csv())
}

/// Stationary `P`, `Π` and their residuals as JSON.
#[pyfunction]
#[pyo3(signature = (problem, t_sim=20.0, ode_step=None))]
fn solve_infinite(problem: &Problem, t_sim: f64, ode_step: Option<f64>) -> PyResult<String> {
    let sol = solve_are(&problem.spec, &tolerance(ode_step)?, t_sim).map_err(solver_err)?;
    let v = serde_json::json!({
        "P": rows(&sol.p),
        "Pi": rows(&sol.pi),
        "upsilon": rows(&sol.upsilon),
        "residual_P": sol.residual_p,
        "residual_Pi": sol.residual_pi,
        "P_stabilizing": sol.p_stabilizing,
        "mean_closed_loop": sol.mean_closed_loop,
    });
    Ok(v.to_string())
}

/// Monte Carlo run of the decentralized law; summary as JSON.
#[pyfunction]
#[pyo3(signature = (problem, agents=None, dt=1e-3, t=None, reps=100, seed=0, antithetic=false))]
fn simulate(
    problem: &Problem,
    agents: Option<usize>,
    dt: f64,
    t: Option<f64>,
    reps: usize,
    seed: u64,
    antithetic: bool,
) -> PyResult<String> {
    let spec = &problem.spec;
    let tol = tolerance(None)?;
    let mut cfg = SimConfig::new(dt, horizon_t(spec, t)?, reps, seed);
    cfg.antithetic = antithetic;
    cfg.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    let law = decentralized_law(spec, cfg.t_sim, &tol).map_err(solver_err)?;
    let n = agents.unwrap_or(spec.agents);
    let res = simulate_population(&spec.with_agents(n), &law, &cfg).map_err(solver_err)?;
    Ok(res.summary_json().to_string())
}

/// Decentralized-versus-centralized cost gap over population sizes, as JSON.
#[pyfunction]
#[pyo3(signature = (problem, n_list, dt=1e-3, t=None, reps=100, seed=0, antithetic=false))]
fn gap(
    problem: &Problem,
    n_list: Vec<usize>,
    dt: f64,
    t: Option<f64>,
    reps: usize,
    seed: u64,
    antithetic: bool,
) -> PyResult<String> {
    let spec = &problem.spec;
    let mut cfg = SimConfig::new(dt, horizon_t(spec, t)?, reps, seed);
    cfg.antithetic = antithetic;
    cfg.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    let curve = gap_curve(spec, &n_list, &cfg, &tolerance(None)?).map_err(solver_err)?;
    Ok(serde_json::to_string(&curve).expect("plain data"))
}

/// Asymptotic social value of an infinite-horizon problem, as JSON.
#[pyfunction]
#[pyo3(signature = (problem, t_sim=40.0, ode_step=None))]
fn value(problem: &Problem, t_sim: f64, ode_step: Option<f64>) -> PyResult<String> {
    let sol = solve_are(&problem.spec, &tolerance(ode_step)?, t_sim).map_err(solver_err)?;
    Ok(asymptotic_value(&problem.spec, &sol).map_err(solver_err)?.to_json().to_string())
}

#[pymodule]
fn mfsocial_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(solve_finite, m)?)?;
    m.add_function(wrap_pyfunction!(solve_infinite, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(value, m)?)?;
    Ok(())
}
