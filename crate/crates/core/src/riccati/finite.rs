use std::fmt::Write as _;

use super::{psi_of, upsilon_of, Result, RiccatiError, Triple};
use crate::linalg::{
    integrate_ode, min_eigenvalue_sym, pinv, rk4_step, symmetrize, uniform_grid, GridFn,
    LinalgError, Matrix, OdeState, Tolerance, Vector, ESCAPE_NORM,
};
use crate::model::{derive_weights, DerivedWeights, ProblemSpec};

/// Backward solution `(P, K, s)` on a uniform grid of `[0, T]`.
#[derive(Debug, Clone)]
pub struct RiccatiFiniteSolution {
    pub times: Vec<f64>,
    pub p: Vec<Matrix>,
    pub k: Vec<Matrix>,
    pub s: Vec<Vector>,
    pub upsilon: Vec<Matrix>,
    /// Largest defect of the discrete solution in the defining equations, measured with a
    /// fourth-order centered difference at interior knots.
    pub residual: f64,
    /// `Some(N)` for the population solution, `None` for the limit problem.
    pub agents: Option<usize>,
    interp: GridFn<Triple>,
}

impl RiccatiFiniteSolution {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn step(&self) -> f64 {
        self.interp.step
    }

    /// `1/N`, or `0` for the limit problem.
    pub fn inv_n(&self) -> f64 {
        self.agents.map_or(0.0, |n| 1.0 / n as f64)
    }

    /// Cubic Hermite interpolation of `(P, K, s)` using the equation's own derivatives.
    pub fn state_at(&self, t: f64) -> Triple {
        self.interp.eval(t)
    }

    /// `P̃ = P + K/N` at knot `i`.
    pub fn p_tilde(&self, i: usize) -> Matrix {
        &self.p[i] + &self.k[i] * self.inv_n()
    }

    /// Columns `t, vec(P), vec(K), s, eig(Υ)`.
    pub fn to_csv(&self) -> String {
        let n = self.p[0].nrows();
        let r = self.upsilon[0].nrows();
        let mut out = String::from("t");
        for j in 0..n {
            for i in 0..n {
                write!(out, ",P_{}{}", i + 1, j + 1).unwrap();
            }
        }
        for j in 0..n {
            for i in 0..n {
                write!(out, ",K_{}{}", i + 1, j + 1).unwrap();
            }
        }
        for i in 0..n {
            write!(out, ",s_{}", i + 1).unwrap();
        }
        for i in 0..r {
            write!(out, ",upsilon_eig_{}", i + 1).unwrap();
        }
        out.push('\n');
        for (idx, t) in self.times.iter().enumerate() {
            write!(out, "{t:.9e}").unwrap();
            for v in self.p[idx]
                .iter()
                .chain(self.k[idx].iter())
                .chain(self.s[idx].iter())
            {
                write!(out, ",{v:.12e}").unwrap();
            }
            let mut eig: Vec<f64> = self.upsilon[idx]
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .collect();
            eig.sort_by(f64::total_cmp);
            for v in eig {
                write!(out, ",{v:.12e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Right-hand side of the backward equations for coupling strength `inv_n`.
pub(crate) struct BackwardField<'a> {
    spec: &'a ProblemSpec,
    weights: DerivedWeights,
    inv_n: f64,
    tol: Tolerance,
}

impl<'a> BackwardField<'a> {
    pub(crate) fn new(spec: &'a ProblemSpec, inv_n: f64, tol: Tolerance) -> Self {
        Self {
            spec,
            weights: derive_weights(spec),
            inv_n,
            tol,
        }
    }

    pub(crate) fn p_tilde(&self, x: &Triple) -> Matrix {
        &x.p + &x.k * self.inv_n
    }

    /// `dP/dt`, `dK/dt` and `Υ†`.
    pub(crate) fn matrix_rhs(&self, x: &Triple) -> Result<(Matrix, Matrix, Matrix)> {
        let s = self.spec;
        let pt = self.p_tilde(x);
        let ups = upsilon_of(s, &pt);
        let up = pinv(&ups, &self.tol)?;
        let psi = psi_of(s, &x.p, &pt);
        let ag = &s.a + &s.g;
        let btk = s.b.transpose() * &x.k;
        let up_psi = &up * &psi;
        let up_btk = &up * &btk;
        let dp = -(s.a.transpose() * &x.p + &x.p * &s.a + s.c.transpose() * &pt * &s.c + &s.q
            - psi.transpose() * &up_psi);
        let dk = -(ag.transpose() * &x.k + &x.k * &ag + s.g.transpose() * &x.p + &x.p * &s.g
            - psi.transpose() * &up_btk
            - btk.transpose() * &up_psi
            - btk.transpose() * &up_btk
            - &self.weights.q_gamma);
        Ok((symmetrize(&dp), symmetrize(&dk), up))
    }

    pub(crate) fn rhs(&self, t: f64, x: &Triple) -> Result<Triple> {
        let s = self.spec;
        let (dp, dk, up) = self.matrix_rhs(x)?;
        let pt = self.p_tilde(x);
        let pk = &x.p + &x.k;
        let lam = s.b.transpose() * &pk + s.d.transpose() * &pt * &s.c;
        let a_cl = &s.a + &s.g - &s.b * &up * &lam;
        let c_cl = &s.c - &s.d * &up * &lam;
        let ds = -(a_cl.transpose() * &x.s
            + &pk * s.f.eval(t)
            + c_cl.transpose() * &pt * s.sigma.eval(t)
            - self.weights.eta_bar(t));
        Ok(Triple {
            p: dp,
            k: dk,
            s: ds,
        })
    }

    fn terminal(&self) -> Triple {
        Triple {
            p: self.spec.h.clone(),
            k: -self.weights.h_gamma0.clone(),
            s: -self.weights.eta_bar0.clone(),
        }
    }
}

fn solve_backward(
    spec: &ProblemSpec,
    tol: &Tolerance,
    agents: Option<usize>,
) -> Result<RiccatiFiniteSolution> {
    tol.validate()?;
    let big_t = spec.final_time().ok_or(RiccatiError::Horizon(
        "finite-horizon Riccati solver",
        "finite",
    ))?;
    let inv_n = agents.map_or(0.0, |n| 1.0 / n as f64);
    let field = BackwardField::new(spec, inv_n, *tol);
    let times = uniform_grid(0.0, big_t, tol.ode_step);
    let last = times.len() - 1;

    let check_upsilon = |t: f64, x: &Triple| -> Result<Matrix> {
        let ups = upsilon_of(spec, &field.p_tilde(x));
        let min_eig = min_eigenvalue_sym(&ups);
        if min_eig < -tol.residual_tol {
            return Err(RiccatiError::UpsilonSign { time: t, min_eig });
        }
        Ok(ups)
    };

    let mut states = vec![Triple::default_like(spec); times.len()];
    let mut upsilon = vec![Matrix::zeros(0, 0); times.len()];
    states[last] = field.terminal();
    upsilon[last] = check_upsilon(big_t, &states[last])?;
    for i in (0..last).rev() {
        let (t0, t1) = (times[i + 1], times[i]);
        let mut rhs = |t: f64, x: &Triple| field.rhs(t, x);
        let next = rk4_step(&mut rhs, t0, &states[i + 1], t1 - t0).map_err(|e| match e {
            RiccatiError::Linalg(LinalgError::NonFinite(_)) => RiccatiError::Escape { time: t0 },
            e => e,
        })?;
        let norm = next.norm_inf();
        if !norm.is_finite() || norm > ESCAPE_NORM {
            return Err(RiccatiError::Escape { time: t1 });
        }
        let next = Triple {
            p: symmetrize(&next.p),
            k: symmetrize(&next.k),
            s: next.s,
        };
        upsilon[i] = check_upsilon(t1, &next)?;
        states[i] = next;
    }

    let derivs = times
        .iter()
        .zip(&states)
        .map(|(&t, x)| field.rhs(t, x))
        .collect::<Result<Vec<_>>>()?;
    let h = if last > 0 { times[1] - times[0] } else { big_t };
    let residual = stencil_residual(&states, &derivs, h);

    Ok(RiccatiFiniteSolution {
        p: states.iter().map(|x| x.p.clone()).collect(),
        k: states.iter().map(|x| x.k.clone()).collect(),
        s: states.iter().map(|x| x.s.clone()).collect(),
        upsilon,
        residual,
        agents,
        interp: GridFn::with_derivs(0.0, h, states, derivs),
        times,
    })
}

impl Triple {
    fn default_like(spec: &ProblemSpec) -> Self {
        let n = spec.state_dim;
        Triple {
            p: Matrix::zeros(n, n),
            k: Matrix::zeros(n, n),
            s: Vector::zeros(n),
        }
    }
}

/// Max over interior knots of `‖D₄X − F(X)‖`, with `D₄` the five-point centered difference.
fn stencil_residual(states: &[Triple], derivs: &[Triple], h: f64) -> f64 {
    if states.len() < 5 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 2..states.len() - 2 {
        let fd = states[i - 2]
            .scale(1.0)
            .axpy(-8.0, &states[i - 1])
            .axpy(8.0, &states[i + 1])
            .axpy(-1.0, &states[i + 2])
            .scale(1.0 / (12.0 * h));
        let d = fd.axpy(-1.0, &derivs[i]);
        worst = worst.max(d.p.norm()).max(d.k.norm()).max(d.s.norm());
    }
    worst
}

/// Limit-problem triple: `P(T) = H`, `K(T) = −H_Γ₀`, `s(T) = −η̄₀`.
///
/// Fails with the failure time if the solution escapes or `Υ = R + DᵀPD` acquires an
/// eigenvalue below `−residual_tol` anywhere on `[0, T]`.
pub fn solve_finite_limit(spec: &ProblemSpec, tol: &Tolerance) -> Result<RiccatiFiniteSolution> {
    solve_backward(spec, tol, None)
}

/// Population-`N` triple `(P_N, K_N, s_N)` with `N = spec.agents`.
pub fn solve_finite_n(spec: &ProblemSpec, tol: &Tolerance) -> Result<RiccatiFiniteSolution> {
    solve_backward(spec, tol, Some(spec.agents.max(1)))
}

/// Mean-field trajectory `x̄` on the solution grid, from `x̄(0) = x0_mean`:
/// `dx̄/dt = (A+G)x̄ − BΥ†[(Bᵀ(P+K) + DᵀP̃C)x̄ + Bᵀs + DᵀP̃σ] + f`.
pub fn mean_field_finite(
    spec: &ProblemSpec,
    sol: &RiccatiFiniteSolution,
    tol: &Tolerance,
) -> Result<GridFn<Vector>> {
    let inv_n = sol.inv_n();
    let ag = &spec.a + &spec.g;
    let rhs = |t: f64, x: &Vector| -> Result<Vector> {
        let tr = sol.state_at(t);
        let pt = &tr.p + &tr.k * inv_n;
        let up = pinv(&upsilon_of(spec, &pt), tol)?;
        let lam = spec.b.transpose() * (&tr.p + &tr.k) + spec.d.transpose() * &pt * &spec.c;
        let offset = spec.b.transpose() * &tr.s + spec.d.transpose() * &pt * spec.sigma.eval(t);
        Ok(&ag * x - &spec.b * (&up * (&lam * x + offset)) + spec.f.eval(t))
    };
    let traj = integrate_ode(rhs, 0.0, sol.horizon(), spec.x0_mean.clone(), sol.step())?;
    Ok(GridFn::from_trajectory(&traj))
}
