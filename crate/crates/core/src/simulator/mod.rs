//! Euler–Maruyama simulation of the coupled population and of the single-agent
//! mean-field-type system, with cost and consistency bookkeeping.
//!
//! The population is always simulated with its true coupling: `x⁽ᴺ⁾` is recomputed from the
//! current states at every step. Each (seed, replication, agent) triple owns a random stream;
//! the initial state is drawn first, then one standard normal per step. Replications are
//! processed in fixed blocks and reduced in index order, so results do not depend on the
//! number of worker threads.

mod engine;
mod moments;

pub use engine::{evaluate_cost, CostSummary, PathRecord};
pub use moments::{expected_cost, MomentCost};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{is_hurwitz, lift_msq, LinalgError, Tolerance};
use crate::model::{Horizon, ProblemSpec};
use crate::synthesis::{closed_loop, ControlLaw};

use engine::{Block, Engine};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("state of agent {agent} diverged at t = {time:.6} (replication {replication})")]
    Divergence {
        agent: usize,
        time: f64,
        replication: usize,
    },
    #[error("law/horizon mismatch: {0}")]
    Horizon(String),
    #[error("closed loop is not stable: {0}")]
    NotStable(String),
    #[error("path grid does not match the cost grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Simulated horizon. Finite-horizon problems must use their own `T`; infinite-horizon
    /// costs are truncated here.
    pub t_sim: f64,
    pub replications: usize,
    pub seed: u64,
    /// Stride of recorded paths and second-moment samples.
    pub thinning: usize,
    /// Pair replications `2k, 2k+1` on one stream with opposite signs.
    pub antithetic: bool,
    /// Record thinned paths (states and controls) of replication 0.
    pub record_paths: bool,
    /// Also propagate each agent's mean-field-type twin on the same noise and measure
    /// `∫E‖x_i − z_i‖²`.
    pub twin: bool,
}

impl SimConfig {
    pub fn new(dt: f64, t_sim: f64, replications: usize, seed: u64) -> Self {
        Self {
            dt,
            t_sim,
            replications,
            seed,
            thinning: 10,
            antithetic: false,
            record_paths: false,
            twin: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_sim >= self.dt && self.t_sim.is_finite()) {
            return bad("T_sim must be at least dt");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1");
        }
        if self.antithetic && self.replications % 2 == 1 {
            return bad("antithetic sampling needs an even replication count");
        }
        Ok(())
    }

    /// Number of Euler steps; `T_sim/dt` rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        ((self.t_sim / self.dt).round() as usize).max(1)
    }

    /// The step actually used so that `steps·dt = T_sim` exactly.
    pub fn step(&self) -> f64 {
        self.t_sim / self.steps() as f64
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean and standard error of i.i.d. samples; antithetic pairs are averaged first.
    pub fn from_samples(values: &[f64], antithetic: bool) -> Self {
        let units: Vec<f64> = if antithetic {
            values.chunks(2).map(|p| p.iter().sum::<f64>() / p.len() as f64).collect()
        } else {
            values.to_vec()
        };
        let n = units.len() as f64;
        let mean = pairwise_sum(&units) / n;
        if units.len() < 2 {
            return Self { mean, se: f64::NAN };
        }
        let dev: Vec<f64> = units.iter().map(|v| (v - mean).powi(2)).collect();
        let var = pairwise_sum(&dev) / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

/// Summation by recursive halving in index order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub agents: usize,
    pub replications: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Expected cost of each agent, averaged over replications.
    pub individual_costs: Vec<f64>,
    pub social_cost: f64,
    /// Per-agent social cost with its standard error.
    pub cost_per_agent: Estimate,
    /// Per-agent social cost of every replication (for common-random-number differences).
    pub replication_costs: Vec<f64>,
    /// `∫‖x⁽ᴺ⁾ − x̄‖²dt` (zero for the mean-field-type system).
    pub consistency_error: Estimate,
    /// `∫E‖x_i − z_i‖²dt` against the mean-field-type twins.
    pub twin_gap: Option<Estimate>,
    /// Truncation error estimate of infinite-horizon costs; zero on finite horizons.
    pub tail_bound: f64,
    /// Agent-averaged `∫(‖x‖² + ‖u‖²)dt`.
    pub second_moment_integral: Estimate,
    /// Increment of that integral over the last 10% of the horizon, relative to its value.
    pub plateau_increment: f64,
    /// `max_t E‖x(t)‖²` on the thinned grid.
    pub sup_second_moment: f64,
    #[serde(skip)]
    pub paths: Option<PathRecord>,
}

impl SimulationOutput {
    /// Summary without per-replication data.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "agents": self.agents,
            "replications": self.replications,
            "horizon": self.horizon,
            "dt": self.dt,
            "individual_costs": self.individual_costs,
            "social_cost": self.social_cost,
            "cost_per_agent": self.cost_per_agent,
            "consistency_error": self.consistency_error,
            "twin_gap": self.twin_gap,
            "tail_bound": finite_or_null(self.tail_bound),
            "second_moment_integral": self.second_moment_integral,
            "plateau_increment": self.plateau_increment,
            "sup_second_moment": self.sup_second_moment,
        })
    }
}

pub(crate) fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Replications per reduction block; fixed so the summation order never depends on threads.
const BLOCK: usize = 64;

fn horizon_for(spec: &ProblemSpec, law: &ControlLaw, cfg: &SimConfig) -> Result<(), SimError> {
    match (spec.horizon, law.horizon) {
        (Horizon::Finite(t), Horizon::Finite(tl)) => {
            if (t - tl).abs() > 1e-12 || (cfg.t_sim - t).abs() > 1e-9 * t.max(1.0) {
                return Err(SimError::Horizon(format!(
                    "finite horizon {t} needs a law and T_sim on the same horizon (law {tl}, T_sim {})",
                    cfg.t_sim
                )));
            }
        }
        (Horizon::Infinite, Horizon::Infinite) => {}
        _ => return Err(SimError::Horizon("law and problem horizons differ".into())),
    }
    if law.t_end() + 1e-9 < cfg.t_sim {
        return Err(SimError::Horizon(format!(
            "law tables end at {} before T_sim = {}",
            law.t_end(),
            cfg.t_sim
        )));
    }
    Ok(())
}

/// Lifted mean-square abscissa of `(Ā, C̄)` and abscissa of the mean loop, whichever is
/// closer to zero. Used for the infinite-horizon tail estimate.
fn decay_rate(spec: &ProblemSpec, law: &ControlLaw, tol: &Tolerance) -> Result<f64, SimError> {
    let cl = closed_loop(law, spec, 0.0);
    let lifted = is_hurwitz(&lift_msq(&cl.a_bar, &cl.c_bar)?, tol)?.abscissa;
    let mean = &cl.a_bar + &spec.g + &spec.b * law.f_mf.eval(0.0);
    Ok(lifted.max(is_hurwitz(&mean, tol)?.abscissa))
}

fn simulate(
    spec: &ProblemSpec,
    law: &ControlLaw,
    cfg: &SimConfig,
    agents: usize,
    mf_system: bool,
) -> Result<SimulationOutput, SimError> {
    cfg.validate()?;
    horizon_for(spec, law, cfg)?;
    let tol = Tolerance::default();
    let infinite = matches!(spec.horizon, Horizon::Infinite);
    let mut rate = f64::NEG_INFINITY;
    if infinite {
        let cl = closed_loop(law, spec, 0.0);
        let mean_loop = is_hurwitz(&(&cl.a_bar + &spec.g), &tol)?;
        if !mean_loop.hurwitz {
            return Err(SimError::NotStable(format!(
                "A + B·F_self + G has spectral abscissa {:.3e}",
                mean_loop.abscissa
            )));
        }
        rate = decay_rate(spec, law, &tol)?;
    }

    let engine = Engine::new(spec, law, cfg, agents, mf_system)?;
    let n_blocks = cfg.replications.div_ceil(BLOCK);
    let blocks: Vec<Result<Block, SimError>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| engine.run_block(b * BLOCK..((b + 1) * BLOCK).min(cfg.replications)))
        .collect();
    let mut merged: Option<Block> = None;
    let mut first_err: Option<SimError> = None;
    for b in blocks {
        match b {
            Ok(b) => match merged.as_mut() {
                None => merged = Some(b),
                Some(m) => m.absorb(b),
            },
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let total = merged.expect("at least one block");
    let reps = cfg.replications as f64;
    let individual_costs: Vec<f64> = total.agent_cost_sums.iter().map(|c| c / reps).collect();
    let social_cost = pairwise_sum(&individual_costs);
    let cost_per_agent = Estimate::from_samples(&total.rep_costs, cfg.antithetic);
    let msq_mean: Vec<f64> = total.msq_sums.iter().map(|v| v / reps).collect();
    let sup_second_moment = msq_mean.iter().copied().fold(0.0, f64::max);
    let moment = Estimate::from_samples(&total.moment, cfg.antithetic);
    let moment90 = pairwise_sum(&total.moment90) / reps;
    let plateau_increment = if moment.mean > 0.0 {
        (moment.mean - moment90) / moment.mean
    } else {
        0.0
    };
    let tail_bound = if infinite {
        let signals_l2 = [&spec.f, &spec.sigma, &spec.eta]
            .iter()
            .all(|s| s.tail_sq_bound(cfg.t_sim).is_finite());
        if !signals_l2 || rate >= 0.0 {
            f64::INFINITY
        } else {
            let end = pairwise_sum(&total.end_integrand) / reps;
            end.abs() / rate.abs() + spec.q.norm() * spec.eta.tail_sq_bound(cfg.t_sim)
        }
    } else {
        0.0
    };
    Ok(SimulationOutput {
        agents,
        replications: cfg.replications,
        horizon: cfg.t_sim,
        dt: cfg.step(),
        individual_costs,
        social_cost,
        cost_per_agent,
        replication_costs: total.rep_costs,
        consistency_error: Estimate::from_samples(&total.consistency, cfg.antithetic),
        twin_gap: cfg
            .twin
            .then(|| Estimate::from_samples(&total.twin, cfg.antithetic)),
        tail_bound,
        second_moment_integral: moment,
        plateau_increment,
        sup_second_moment,
        paths: total.paths,
    })
}

/// Simulates `spec.agents` agents under `law` with the true empirical coupling `x⁽ᴺ⁾` in the
/// dynamics and cost; the law's own `m` is `x̄` or `x⁽ᴺ⁾` according to its coupling.
pub fn simulate_population(
    spec: &ProblemSpec,
    law: &ControlLaw,
    cfg: &SimConfig,
) -> Result<SimulationOutput, SimError> {
    simulate(spec, law, cfg, spec.agents, false)
}

/// Simulates the single-agent mean-field-type system, where every occurrence of the
/// population average (dynamics, cost, and the law) is replaced by `x̄`.
pub fn simulate_meanfield_type(
    spec: &ProblemSpec,
    law: &ControlLaw,
    cfg: &SimConfig,
) -> Result<SimulationOutput, SimError> {
    let mut cfg = cfg.clone();
    cfg.twin = false;
    simulate(spec, law, &cfg, 1, true)
}
