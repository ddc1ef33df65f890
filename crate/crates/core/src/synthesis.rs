//! Control laws built from Riccati solutions, and their closed loops.
//!
//! Every law has the affine form `u_i = F(t)x_i + M(t)m(t) + g(t)` where `m` is either the
//! deterministic mean-field trajectory `x̄` (decentralized laws) or the empirical average
//! `x⁽ᴺ⁾` of the population (the centralized benchmark).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    is_hurwitz, lift_msq, min_eigenvalue_sym, pinv, GridFn, HurwitzTest, LinalgError, Matrix,
    Tolerance, Vector,
};
use crate::model::{Horizon, ProblemSpec};
use crate::riccati::{
    check_ranges_finite, check_ranges_infinite, mean_field_finite, psi_of, RiccatiError,
    RiccatiFiniteSolution, RiccatiInfiniteSolution, StationaryPopulation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("range condition fails: {name} is not in the range of Υ (residual {residual:.3e})")]
    Range { name: String, residual: f64 },
    #[error("Υ is not positive semidefinite (min eigenvalue {0:.3e})")]
    UpsilonSign(f64),
    #[error("the law needs a population solution (solve with N agents)")]
    NotPopulation,
    #[error("malformed gain table: {0}")]
    Parse(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which average multiplies the mean-field gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `m = x̄(t)`: decentralized, computable from the agent's own state.
    MeanField,
    /// `m = x⁽ᴺ⁾(t)`: needs the whole population.
    Population,
}

#[derive(Debug, Clone)]
pub struct ControlLaw {
    /// `F(t)`, `r×n`, multiplies the agent's own state.
    pub f_self: GridFn<Matrix>,
    /// `M(t)`, `r×n`, multiplies `m(t)`.
    pub f_mf: GridFn<Matrix>,
    pub g: GridFn<Vector>,
    /// Mean-field trajectory; used as `m` under [`Coupling::MeanField`] and as the
    /// reference for consistency errors.
    pub xbar: GridFn<Vector>,
    pub coupling: Coupling,
    pub horizon: Horizon,
}

impl ControlLaw {
    /// `u = F(t)x + M(t)m + g(t)`.
    pub fn control(&self, t: f64, x: &Vector, m: &Vector) -> Vector {
        self.f_self.eval(t) * x + self.f_mf.eval(t) * m + self.g.eval(t)
    }

    /// Last time on which all tables are defined.
    pub fn t_end(&self) -> f64 {
        let end = |len: usize, t: f64| if len == 1 { f64::INFINITY } else { t };
        end(self.g.len(), self.g.t_end()).min(end(self.xbar.len(), self.xbar.t_end()))
    }

    /// Columns `t, vec(F), vec(M), g, x̄` on the offset grid.
    pub fn to_csv(&self) -> String {
        let f0 = self.f_self.eval(0.0);
        let (r, n) = f0.shape();
        let mut out = String::from("t");
        for name in ["F_self", "F_mf"] {
            for j in 0..n {
                for i in 0..r {
                    write!(out, ",{name}_{}{}", i + 1, j + 1).unwrap();
                }
            }
        }
        for i in 0..r {
            write!(out, ",g_{}", i + 1).unwrap();
        }
        for i in 0..n {
            write!(out, ",xbar_{}", i + 1).unwrap();
        }
        out.push('\n');
        let t_end = self.t_end();
        for k in 0..self.g.len() {
            let t = self.g.time(k);
            if t > t_end + 1e-12 {
                break;
            }
            write!(out, "{t:.9e}").unwrap();
            let vals = self.f_self.eval(t);
            let mf = self.f_mf.eval(t);
            let xb = self.xbar.eval(t);
            for v in vals.iter().chain(mf.iter()).chain(self.g.values[k].iter()).chain(xb.iter()) {
                write!(out, ",{v:.15e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Reads a table written by [`ControlLaw::to_csv`]. Lines starting with `#` are skipped.
    pub fn from_csv(text: &str, coupling: Coupling, horizon: Horizon) -> Result<Self, SynthesisError> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| SynthesisError::Parse("empty table".into()))?
            .split(',')
            .collect();
        let count = |p: &str| header.iter().filter(|h| h.starts_with(p)).count();
        let (rn, r, n) = (count("F_self_"), count("g_"), count("xbar_"));
        if r == 0 || n == 0 || rn != r * n || count("F_mf_") != rn || header.len() != 1 + 2 * rn + r + n {
            return Err(SynthesisError::Parse("unexpected header".into()));
        }
        let mut times = Vec::new();
        let (mut fs, mut fm, mut gs, mut xs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SynthesisError::Parse(e.to_string()))?;
            if vals.len() != header.len() {
                return Err(SynthesisError::Parse(format!("row has {} fields", vals.len())));
            }
            times.push(vals[0]);
            let mut off = 1;
            fs.push(Matrix::from_column_slice(r, n, &vals[off..off + rn]));
            off += rn;
            fm.push(Matrix::from_column_slice(r, n, &vals[off..off + rn]));
            off += rn;
            gs.push(Vector::from_column_slice(&vals[off..off + r]));
            off += r;
            xs.push(Vector::from_column_slice(&vals[off..off + n]));
        }
        if times.is_empty() {
            return Err(SynthesisError::Parse("no rows".into()));
        }
        let step = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        let t0 = times[0];
        Ok(ControlLaw {
            f_self: GridFn::new(t0, step, fs),
            f_mf: GridFn::new(t0, step, fm),
            g: GridFn::new(t0, step, gs),
            xbar: GridFn::new(t0, step, xs),
            coupling,
            horizon,
        })
    }
}

fn require_psd(ups: &Matrix, tol: &Tolerance) -> Result<(), SynthesisError> {
    let m = min_eigenvalue_sym(ups);
    if m < -tol.residual_tol {
        return Err(SynthesisError::UpsilonSign(m));
    }
    Ok(())
}

fn range_gate(report: crate::riccati::RangeReport) -> Result<(), SynthesisError> {
    match report.failing() {
        Some(c) => Err(SynthesisError::Range {
            name: c.name.clone(),
            residual: c.residual,
        }),
        None => Ok(()),
    }
}

/// Decentralized finite-horizon law from the limit triple:
/// `F = −Υ†(BᵀP + DᵀPC)`, `M = −Υ†BᵀK`, `g = −Υ†(Bᵀs + DᵀPσ)`, with `m = x̄`.
pub fn build_law_finite(
    sol: &RiccatiFiniteSolution,
    spec: &ProblemSpec,
    tol: &Tolerance,
) -> Result<ControlLaw, SynthesisError> {
    range_gate(check_ranges_finite(sol, spec, tol))?;
    let xbar = mean_field_finite(spec, sol, tol)?;
    let coupling = if sol.agents.is_some() {
        Coupling::Population
    } else {
        Coupling::MeanField
    };
    let (mut fs, mut fm, mut gs) = (Vec::new(), Vec::new(), Vec::new());
    let bt = spec.b.transpose();
    for (i, &t) in sol.times.iter().enumerate() {
        require_psd(&sol.upsilon[i], tol)?;
        let up = pinv(&sol.upsilon[i], tol)?;
        let pt = sol.p_tilde(i);
        fs.push(-(&up * psi_of(spec, &sol.p[i], &pt)));
        fm.push(-(&up * &bt * &sol.k[i]));
        gs.push(-(&up * (&bt * &sol.s[i] + spec.d.transpose() * &pt * spec.sigma.eval(t))));
    }
    let step = sol.step();
    Ok(ControlLaw {
        f_self: GridFn::new(0.0, step, fs),
        f_mf: GridFn::new(0.0, step, fm),
        g: GridFn::new(0.0, step, gs),
        xbar,
        coupling,
        horizon: spec.horizon,
    })
}

/// Centralized finite-horizon law from the population triple `(P_N, K_N, s_N)`:
/// `u_i = −Υ_N†[(BᵀP_N + DᵀP̃C)x_i + BᵀK_N x⁽ᴺ⁾ + Bᵀs_N + DᵀP̃σ]`.
pub fn build_centralized_finite(
    sol_n: &RiccatiFiniteSolution,
    spec: &ProblemSpec,
    tol: &Tolerance,
) -> Result<ControlLaw, SynthesisError> {
    if sol_n.agents.is_none() {
        return Err(SynthesisError::NotPopulation);
    }
    build_law_finite(sol_n, spec, tol)
}

/// Decentralized infinite-horizon law: `F = −Υ†(BᵀP + DᵀPC)`, `M = −Υ†Bᵀ(Π − P)`,
/// `g(t) = −Υ†(Bᵀs(t) + DᵀPσ(t))`, with `m = x̄`.
pub fn build_law_infinite(
    sol: &RiccatiInfiniteSolution,
    spec: &ProblemSpec,
    tol: &Tolerance,
) -> Result<ControlLaw, SynthesisError> {
    require_psd(&sol.upsilon, tol)?;
    range_gate(check_ranges_infinite(sol, spec, tol))?;
    let up = &sol.upsilon_pinv;
    let f_self = -(up * psi_of(spec, &sol.p, &sol.p));
    let f_mf = -(up * spec.b.transpose() * (&sol.pi - &sol.p));
    let dtp = spec.d.transpose() * &sol.p;
    let g: Vec<Vector> = (0..sol.s.len())
        .map(|k| {
            let t = sol.s.time(k);
            -(up * (spec.b.transpose() * &sol.s.values[k] + &dtp * spec.sigma.eval(t)))
        })
        .collect();
    Ok(ControlLaw {
        f_self: GridFn::new(0.0, 1.0, vec![f_self]),
        f_mf: GridFn::new(0.0, 1.0, vec![f_mf]),
        g: GridFn::new(0.0, sol.s.step, g),
        xbar: sol.xbar.clone(),
        coupling: Coupling::MeanField,
        horizon: Horizon::Infinite,
    })
}

/// Centralized infinite-horizon law from the stationary population pair.
pub fn build_centralized_infinite(
    pop: &StationaryPopulation,
    spec: &ProblemSpec,
    xbar: &GridFn<Vector>,
    tol: &Tolerance,
) -> Result<ControlLaw, SynthesisError> {
    require_psd(&pop.upsilon, tol)?;
    let up = &pop.upsilon_pinv;
    let pt = pop.p_tilde();
    let bt = spec.b.transpose();
    let f_self = -(up * psi_of(spec, &pop.p, &pt));
    let f_mf = -(up * &bt * &pop.k);
    let (ok, residual) = crate::riccati::range_inclusion(&pop.upsilon, up, &(-(&pop.upsilon * &f_self)), tol);
    if !ok {
        return Err(SynthesisError::Range {
            name: "B'P_N + D'P~C".into(),
            residual,
        });
    }
    let dtp = spec.d.transpose() * &pt;
    let g: Vec<Vector> = (0..pop.s.len())
        .map(|k| {
            let t = pop.s.time(k);
            -(up * (&bt * &pop.s.values[k] + &dtp * spec.sigma.eval(t)))
        })
        .collect();
    Ok(ControlLaw {
        f_self: GridFn::new(0.0, 1.0, vec![f_self]),
        f_mf: GridFn::new(0.0, 1.0, vec![f_mf]),
        g: GridFn::new(0.0, pop.s.step, g),
        xbar: xbar.clone(),
        coupling: Coupling::Population,
        horizon: Horizon::Infinite,
    })
}

/// Closed-loop coefficients at time `t`:
/// `dx_i = (Āx_i + Gm + f̄)dt + (C̄x_i + σ̄)dW_i` for the decentralized law,
/// where `f̄ = f + B(Mx̄ + g)` and `σ̄ = σ + D(Mx̄ + g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_bar: Matrix,
    pub c_bar: Matrix,
    pub f_bar: Vector,
    pub sigma_bar: Vector,
}

pub fn closed_loop(law: &ControlLaw, spec: &ProblemSpec, t: f64) -> ClosedLoop {
    let f = law.f_self.eval(t);
    let v = law.f_mf.eval(t) * law.xbar.eval(t) + law.g.eval(t);
    ClosedLoop {
        a_bar: &spec.a + &spec.b * &f,
        c_bar: &spec.c + &spec.d * &f,
        f_bar: spec.f.eval(t) + &spec.b * &v,
        sigma_bar: spec.sigma.eval(t) + &spec.d * &v,
    }
}

/// Stability facts of a stationary law that the simulator relies on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopStability {
    /// `Ā + G`.
    pub mean_with_coupling: HurwitzTest,
    /// Lifted `(Ā, C̄)`.
    pub mean_square: HurwitzTest,
}

pub fn loop_stability(law: &ControlLaw, spec: &ProblemSpec, tol: &Tolerance) -> Result<LoopStability, SynthesisError> {
    let cl = closed_loop(law, spec, 0.0);
    Ok(LoopStability {
        mean_with_coupling: is_hurwitz(&(&cl.a_bar + &spec.g), tol)?,
        mean_square: is_hurwitz(&lift_msq(&cl.a_bar, &cl.c_bar)?, tol)?,
    })
}

/// `‖Rû + Bᵀp̂ + Dᵀβ̂‖` with `p̂ = Px + Kx̄ + s` and `β̂ = P(Cx + Dû + σ)` at knot `i` of
/// a limit solution.
pub fn stationarity_defect(
    spec: &ProblemSpec,
    sol: &RiccatiFiniteSolution,
    i: usize,
    xbar: &Vector,
    x: &Vector,
    u: &Vector,
) -> f64 {
    let t = sol.times[i];
    let p = &sol.p[i];
    let p_hat = p * x + &sol.k[i] * xbar + &sol.s[i];
    let beta = p * (&spec.c * x + &spec.d * u + spec.sigma.eval(t));
    (&spec.r * u + spec.b.transpose() * p_hat + spec.d.transpose() * beta).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::riccati::{solve_are, solve_finite_limit};
    use approx::assert_abs_diff_eq;

    #[test]
    fn trivial_zero_gives_zero_gains() {
        let tol = Tolerance::default().with_ode_step(1e-2);
        let spec = presets::trivial_zero(2, 1, Horizon::Finite(1.0));
        let law = build_law_finite(&solve_finite_limit(&spec, &tol).unwrap(), &spec, &tol).unwrap();
        for k in 0..law.g.len() {
            assert_eq!(law.f_self.values[k].amax(), 0.0);
            assert_eq!(law.f_mf.values[k].amax(), 0.0);
            assert_eq!(law.g.values[k].amax(), 0.0);
        }
    }

    #[test]
    fn terminal_gain_of_closed_form_example() {
        // P(T) = 1, Υ(T) = 1 + r, Ψ(T) = P(T): F(T) = −1/(1 + r)
        let r = -0.5;
        let tol = Tolerance::default().with_ode_step(1e-3);
        let spec = presets::example1(r, 1.0, 0.2);
        let law = build_law_finite(&solve_finite_limit(&spec, &tol).unwrap(), &spec, &tol).unwrap();
        assert_abs_diff_eq!(law.f_self.eval(0.2)[(0, 0)], -1.0 / (1.0 + r), epsilon = 1e-12);
    }

    #[test]
    fn pinned_reference_problem_law() {
        let tol = Tolerance::default();
        let spec = presets::sec6_pinned();
        let sol = solve_are(&spec, &tol, 2.0).unwrap();
        let law = build_law_infinite(&sol, &spec, &tol).unwrap();
        let p = presets::SEC6_REFERENCE_P;
        assert_abs_diff_eq!(law.f_self.eval(0.0)[(0, 0)], -(p + p) / (p - 0.2), epsilon = 1e-12);
        let st = loop_stability(&law, &spec, &tol).unwrap();
        assert!(st.mean_with_coupling.hurwitz && st.mean_square.hurwitz);
        let cl = closed_loop(&law, &spec, 0.0);
        assert_abs_diff_eq!(cl.a_bar[(0, 0)] + spec.g[(0, 0)], 0.1 - 2.0 * p / (p - 0.2) - 0.1, epsilon = 1e-12);
        // gains live in the range of Υ
        let f = law.f_self.eval(0.0);
        assert_abs_diff_eq!(&sol.upsilon_pinv * &sol.upsilon * &f, f, epsilon = 1e-9);
    }

    #[test]
    fn zero_gain_leaves_open_loop() {
        let spec = presets::trivial_zero(2, 1, Horizon::Finite(1.0));
        let z = Matrix::zeros(1, 2);
        let law = ControlLaw {
            f_self: GridFn::new(0.0, 1.0, vec![z.clone()]),
            f_mf: GridFn::new(0.0, 1.0, vec![z]),
            g: GridFn::new(0.0, 1.0, vec![Vector::zeros(1)]),
            xbar: GridFn::new(0.0, 1.0, vec![Vector::zeros(2)]),
            coupling: Coupling::MeanField,
            horizon: spec.horizon,
        };
        let cl = closed_loop(&law, &spec, 0.5);
        assert_eq!(cl.a_bar, spec.a);
        assert_eq!(cl.c_bar, spec.c);
    }

    #[test]
    fn gain_table_round_trips() {
        let tol = Tolerance::default().with_ode_step(1e-2);
        let spec = presets::sec6_finite(0.3, 1.0);
        let law = build_law_finite(&solve_finite_limit(&spec, &tol).unwrap(), &spec, &tol).unwrap();
        let back = ControlLaw::from_csv(&format!("# manifest abc\n{}", law.to_csv()), Coupling::MeanField, spec.horizon).unwrap();
        for &t in &[0.0, 0.123, 0.3] {
            assert_abs_diff_eq!(back.f_self.eval(t), law.f_self.eval(t), epsilon = 1e-12);
            assert_abs_diff_eq!(back.g.eval(t), law.g.eval(t), epsilon = 1e-12);
            assert_abs_diff_eq!(back.xbar.eval(t), law.xbar.eval(t), epsilon = 1e-12);
        }
    }
}
