//! Centralized benchmark, optimality-gap curves, and the asymptotic per-agent value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{quadrature, GridFn, Tolerance, Vector};
use crate::model::{Horizon, ProblemSpec};
use crate::riccati::{
    solve_are, solve_are_n, solve_finite_limit, solve_finite_n, RiccatiError,
    RiccatiInfiniteSolution,
};
use crate::simulator::{
    expected_cost, finite_or_null, simulate_population, Estimate, SimConfig, SimError,
};
use crate::synthesis::{
    build_centralized_finite, build_centralized_infinite, build_law_finite, build_law_infinite,
    ControlLaw, SynthesisError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SocialError {
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("value integrand does not decay: {0}")]
    NonDecaying(String),
}

/// Decentralized law and the centralized law for `N` agents, on the problem's horizon.
fn law_pair(
    spec: &ProblemSpec,
    agents: usize,
    t_sim: f64,
    dec: &ControlLaw,
    tol: &Tolerance,
) -> Result<ControlLaw, SocialError> {
    let sp = spec.with_agents(agents);
    Ok(match spec.horizon {
        Horizon::Finite(_) => build_centralized_finite(&solve_finite_n(&sp, tol)?, &sp, tol)?,
        Horizon::Infinite => {
            build_centralized_infinite(&solve_are_n(&sp, tol, t_sim)?, &sp, &dec.xbar, tol)?
        }
    })
}

/// Decentralized law of the limit problem on the problem's horizon.
pub fn decentralized_law(
    spec: &ProblemSpec,
    t_sim: f64,
    tol: &Tolerance,
) -> Result<ControlLaw, SocialError> {
    Ok(match spec.horizon {
        Horizon::Finite(_) => build_law_finite(&solve_finite_limit(spec, tol)?, spec, tol)?,
        Horizon::Infinite => build_law_infinite(&solve_are(spec, tol, t_sim)?, spec, tol)?,
    })
}

/// Monte Carlo per-agent social cost of the centralized law with `agents` agents.
pub fn centralized_cost(
    spec: &ProblemSpec,
    agents: usize,
    cfg: &SimConfig,
    tol: &Tolerance,
) -> Result<Estimate, SocialError> {
    let dec = decentralized_law(spec, cfg.t_sim, tol)?;
    let cen = law_pair(spec, agents, cfg.t_sim, &dec, tol)?;
    Ok(simulate_population(&spec.with_agents(agents), &cen, cfg)?.cost_per_agent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub agents: usize,
    pub decentralized: Option<Estimate>,
    pub centralized: Option<Estimate>,
    /// Paired difference `decentralized − centralized` under common random numbers.
    pub epsilon: Option<Estimate>,
    /// The same difference from the exact moment equations.
    pub exact_epsilon: Option<f64>,
    /// Why this `N` was aborted, if it was.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub points: Vec<GapPoint>,
}

impl GapCurve {
    /// `N, decentralized, centralized, epsilon, stderr, exact_epsilon`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,decentralized,centralized,epsilon,stderr,exact_epsilon\n");
        let f = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_else(|| "NaN".into());
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.agents,
                f(p.decentralized.map(|e| e.mean)),
                f(p.centralized.map(|e| e.mean)),
                f(p.epsilon.map(|e| e.mean)),
                f(p.epsilon.map(|e| e.se)),
                f(p.exact_epsilon),
            )
            .unwrap();
        }
        out
    }

    /// Least-squares slope of `log ε` against `log N` over points with `N ≥ n_min`.
    /// `None` when fewer than two such points exist or any of them lacks a positive estimate.
    pub fn log_slope(&self, n_min: usize) -> Option<f64> {
        let pts = self
            .points
            .iter()
            .filter(|p| p.agents >= n_min)
            .map(|p| match p.epsilon {
                Some(e) if e.mean > 0.0 => Some(((p.agents as f64).ln(), e.mean.ln())),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        least_squares_slope(&pts)
    }

    /// The same slope computed from the exact differences.
    pub fn exact_log_slope(&self, n_min: usize) -> Option<f64> {
        let pts = self
            .points
            .iter()
            .filter(|p| p.agents >= n_min)
            .map(|p| match p.exact_epsilon {
                Some(e) if e > 0.0 => Some(((p.agents as f64).ln(), e.ln())),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// For each `N`: simulate the decentralized and the centralized law on the same random
/// streams and record the per-agent cost difference.
pub fn gap_curve(
    spec: &ProblemSpec,
    n_values: &[usize],
    cfg: &SimConfig,
    tol: &Tolerance,
) -> Result<GapCurve, SocialError> {
    let dec = decentralized_law(spec, cfg.t_sim, tol)?;
    let points = n_values
        .iter()
        .map(|&n| gap_point(spec, n, cfg, &dec, tol).unwrap_or_else(|e| GapPoint {
            agents: n,
            decentralized: None,
            centralized: None,
            epsilon: None,
            exact_epsilon: None,
            diagnostic: Some(e.to_string()),
        }))
        .collect();
    Ok(GapCurve { points })
}

fn gap_point(
    spec: &ProblemSpec,
    n: usize,
    cfg: &SimConfig,
    dec: &ControlLaw,
    tol: &Tolerance,
) -> Result<GapPoint, SocialError> {
    let sp = spec.with_agents(n);
    let cen = law_pair(spec, n, cfg.t_sim, dec, tol)?;
    let d = simulate_population(&sp, dec, cfg)?;
    let c = simulate_population(&sp, &cen, cfg)?;
    let diff: Vec<f64> = d
        .replication_costs
        .iter()
        .zip(&c.replication_costs)
        .map(|(a, b)| a - b)
        .collect();
    let exact = expected_cost(&sp, dec, Some(n), cfg.t_sim, cfg.step())
        .and_then(|jd| Ok(jd.per_agent - expected_cost(&sp, &cen, Some(n), cfg.t_sim, cfg.step())?.per_agent))
        .ok();
    Ok(GapPoint {
        agents: n,
        decentralized: Some(d.cost_per_agent),
        centralized: Some(c.cost_per_agent),
        epsilon: Some(Estimate::from_samples(&diff, cfg.antithetic)),
        exact_epsilon: exact,
        diagnostic: None,
    })
}

/// Asymptotic per-agent value of the infinite-horizon problem:
/// `value = tr(PΣ₀) + x̄₀ᵀΠx̄₀ + 2s(0)ᵀx̄₀ + m` with
/// `m = ∫[‖σ‖²_P − ‖Bᵀs + DᵀPσ‖²_{Υ†} + 2sᵀf + ‖η‖²_Q]dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticValue {
    pub value: f64,
    /// `tr(PΣ₀)`
    pub initial_covariance: f64,
    /// `x̄₀ᵀΠx̄₀`
    pub initial_mean: f64,
    /// `2s(0)ᵀx̄₀`
    pub initial_offset: f64,
    pub m: f64,
    /// `∫‖σ‖²_Π dt`, not part of `value`; reported so both readings can be compared.
    pub sigma_pi: f64,
    /// Estimated quadrature truncation of `m`.
    pub tail_bound: f64,
    pub integrand_times: Vec<f64>,
    pub integrand: Vec<f64>,
}

impl AsymptoticValue {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "value": self.value,
            "components": {
                "initial_covariance": self.initial_covariance,
                "initial_mean": self.initial_mean,
                "initial_offset": self.initial_offset,
                "m": self.m,
            },
            "m": self.m,
            "sigma_pi": self.sigma_pi,
            "tail_bound": finite_or_null(self.tail_bound),
        })
    }
}

pub fn asymptotic_value(
    spec: &ProblemSpec,
    sol: &RiccatiInfiniteSolution,
) -> Result<AsymptoticValue, SocialError> {
    if spec.horizon != Horizon::Infinite {
        return Err(RiccatiError::Horizon("asymptotic value", "infinite").into());
    }
    let end = sol.s.t_end();
    for (name, sig) in [("sigma", &spec.sigma), ("f", &spec.f), ("eta", &spec.eta)] {
        if !sig.tail_sq_bound(end).is_finite() {
            return Err(SocialError::NonDecaying(format!(
                "{name} is not square integrable, so m diverges (its integrand tends to a nonzero limit)"
            )));
        }
    }
    let (p, pi) = (&sol.p, &sol.pi);
    let bt = spec.b.transpose();
    let dtp = spec.d.transpose() * p;
    let integrand_at = |t: f64, s: &Vector| -> (f64, f64) {
        let sig = spec.sigma.eval(t);
        let w = &bt * s + &dtp * &sig;
        let eta = spec.eta.eval(t);
        let val = sig.dot(&(p * &sig)) - w.dot(&(&sol.upsilon_pinv * &w))
            + 2.0 * s.dot(&spec.f.eval(t))
            + eta.dot(&(&spec.q * &eta));
        (val, sig.dot(&(pi * &sig)))
    };
    let grid: &GridFn<Vector> = &sol.s;
    let mut times = Vec::with_capacity(grid.len());
    let mut vals = Vec::with_capacity(grid.len());
    let mut spi = Vec::with_capacity(grid.len());
    for (k, s) in grid.values.iter().enumerate() {
        let t = grid.time(k);
        let (v, sp) = integrand_at(t, s);
        times.push(t);
        vals.push(v);
        spi.push(sp);
    }
    let m = quadrature(&vals, grid.step).map_err(RiccatiError::from)?;
    let sigma_pi = quadrature(&spi, grid.step).map_err(RiccatiError::from)?;
    let rate = sol.mean_closed_loop.abscissa.max(sol.p_stabilizing.abscissa);
    let last = vals[vals.len() - 1].abs();
    let peak = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if rate >= 0.0 || last > 1e-3 * (1.0 + peak) {
        return Err(SocialError::NonDecaying(format!(
            "integrand is {last:.3e} at t = {end:.3} (peak {peak:.3e})"
        )));
    }
    let tail_bound = last / rate.abs()
        + spec.q.norm() * spec.eta.tail_sq_bound(end)
        + p.norm() * spec.sigma.tail_sq_bound(end);
    let x0 = &spec.x0_mean;
    let initial_covariance = (p * &spec.x0_cov).trace();
    let initial_mean = x0.dot(&(pi * x0));
    let initial_offset = 2.0 * grid.values[0].dot(x0);
    Ok(AsymptoticValue {
        value: initial_covariance + initial_mean + initial_offset + m,
        initial_covariance,
        initial_mean,
        initial_offset,
        m,
        sigma_pi,
        tail_bound,
        integrand_times: times,
        integrand: vals,
    })
}
