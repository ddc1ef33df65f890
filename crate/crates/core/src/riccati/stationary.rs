use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::finite::BackwardField;
use super::{psi_of, upsilon_of, Result, RiccatiError, Triple};
use crate::linalg::{
    from_vec, integrate_ode, is_finite, is_hurwitz, lift_msq, min_eigenvalue_sym, pinv, rk4_step,
    solve_lifted_lyapunov, symmetrize, to_vec, GridFn, HurwitzTest, Matrix, Tolerance, Vector,
    ESCAPE_NORM,
};
use crate::model::{derive_weights, ProblemSpec};

/// Pseudo-time step of the backward march towards a steady state.
const MARCH_STEP: f64 = 0.01;
/// Longest pseudo-horizon before the march is declared non-convergent.
const MARCH_MAX_TIME: f64 = 1e4;
/// Steady state is declared once the sup-norm of the time derivative drops below this.
const MARCH_DERIV_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 60;
/// Longest tail appended after the simulation window when evaluating the offset integral.
const MAX_TAIL: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PSource {
    Solved,
    /// Taken from the problem file instead of solved for.
    Pinned,
}

/// Stationary `P` with its residual and the mean-square verdict of its own feedback.
#[derive(Debug, Clone)]
pub struct StationaryP {
    pub p: Matrix,
    pub upsilon: Matrix,
    /// Frobenius norm of the algebraic residual at `p`.
    pub residual: f64,
    pub source: PSource,
    /// Lifted spectrum of `(A + BF, C + DF)` with `F = −Υ†Ψ`.
    pub stabilizing: HurwitzTest,
}

/// `AᵀP + PA + CᵀPC + Q − ΨᵀΥ†Ψ`.
pub fn are_residual(spec: &ProblemSpec, p: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    let ups = upsilon_of(spec, p);
    let up = pinv(&ups, tol)?;
    let psi = psi_of(spec, p, p);
    Ok(symmetrize(
        &(spec.a.transpose() * p + p * &spec.a + spec.c.transpose() * p * &spec.c + &spec.q
            - psi.transpose() * &up * &psi),
    ))
}

/// `(A+G)ᵀΠ + Π(A+G) − LᵀΥ†L + CᵀPC + Q − Q_Γ` with `L = BᵀΠ + DᵀPC`.
pub fn pi_residual(spec: &ProblemSpec, p: &Matrix, pi: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    let up = pinv(&upsilon_of(spec, p), tol)?;
    let q_gamma = derive_weights(spec).q_gamma;
    Ok(pi_residual_with(spec, p, &up, &q_gamma, pi))
}

fn pi_residual_with(
    spec: &ProblemSpec,
    p: &Matrix,
    up: &Matrix,
    q_gamma: &Matrix,
    pi: &Matrix,
) -> Matrix {
    let ag = &spec.a + &spec.g;
    let l = spec.b.transpose() * pi + spec.d.transpose() * p * &spec.c;
    symmetrize(
        &(ag.transpose() * pi + pi * &ag - l.transpose() * up * &l
            + spec.c.transpose() * p * &spec.c
            + &spec.q
            - q_gamma),
    )
}

/// Marches `dX/dτ = field(X)` with RK4 until the derivative is negligible.
fn march<F>(mut field: F, y0: Matrix, label: &str) -> Result<Matrix>
where
    F: FnMut(f64, &Matrix) -> Result<Matrix>,
{
    let mut y = y0;
    let mut tau = 0.0;
    loop {
        let d = field(tau, &y)?;
        let dn = d.amax();
        if dn <= MARCH_DERIV_TOL {
            return Ok(y);
        }
        if tau >= MARCH_MAX_TIME {
            return Err(RiccatiError::NoSteadyState(format!(
                "{label}: derivative norm {dn:.3e} after pseudo-time {MARCH_MAX_TIME}"
            )));
        }
        y = symmetrize(&rk4_step(&mut field, tau, &y, MARCH_STEP)?);
        tau += MARCH_STEP;
        if !is_finite(&y) || y.amax() > ESCAPE_NORM {
            return Err(RiccatiError::NoSteadyState(format!(
                "{label} escapes at pseudo-time {tau:.3}"
            )));
        }
    }
}

fn self_gain(spec: &ProblemSpec, p: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    let up = pinv(&upsilon_of(spec, p), tol)?;
    Ok(-(up * psi_of(spec, p, p)))
}

fn newton_p(spec: &ProblemSpec, mut p: Matrix, tol: &Tolerance) -> Result<(Matrix, f64)> {
    let mut res = are_residual(spec, &p, tol)?;
    let mut rn = res.norm();
    for _ in 0..NEWTON_MAX_ITERS {
        if rn <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
        let f = self_gain(spec, &p, tol)?;
        let Ok(delta) =
            solve_lifted_lyapunov(&(&spec.a + &spec.b * &f), &(&spec.c + &spec.d * &f), &res)
        else {
            break;
        };
        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..30 {
            let cand = symmetrize(&(&p + &delta * alpha));
            if min_eigenvalue_sym(&upsilon_of(spec, &cand)) >= -tol.residual_tol {
                let cres = are_residual(spec, &cand, tol)?;
                let cn = cres.norm();
                if cn < rn {
                    p = cand;
                    res = cres;
                    rn = cn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((p, rn))
}

fn start_scales(spec: &ProblemSpec, tol: &Tolerance) -> Vec<f64> {
    let rmin = min_eigenvalue_sym(&spec.r);
    let dmin = min_eigenvalue_sym(&(spec.d.transpose() * &spec.d));
    let mut out = Vec::new();
    if rmin > tol.residual_tol {
        out.push(0.0);
    }
    let c0 = if dmin > 1e-12 {
        1.0 + 2.0 * (-rmin).max(0.0) / dmin
    } else {
        1.0
    };
    out.extend([c0, 10.0 * c0, 100.0 * c0]);
    out
}

/// Stationary `P` with `Υ ≥ 0`.
///
/// A pinned `P` from the problem file is returned as is, with its residual. Otherwise the
/// differential equation is marched backward to steady state and polished by Newton steps
/// on the lifted Lyapunov linearization. The march starts at `P = 0` when `R > 0` and
/// otherwise at multiples of the identity large enough to make `Υ` positive definite.
pub fn solve_stationary_p(spec: &ProblemSpec, tol: &Tolerance) -> Result<StationaryP> {
    tol.validate()?;
    let finish = |p: Matrix, residual: f64, source: PSource| -> Result<StationaryP> {
        let f = self_gain(spec, &p, tol)?;
        let lifted = lift_msq(&(&spec.a + &spec.b * &f), &(&spec.c + &spec.d * &f))?;
        Ok(StationaryP {
            upsilon: upsilon_of(spec, &p),
            stabilizing: is_hurwitz(&lifted, tol)?,
            p,
            residual,
            source,
        })
    };
    if let Some(p) = &spec.pinned_p {
        let residual = are_residual(spec, p, tol)?.norm();
        return finish(p.clone(), residual, PSource::Pinned);
    }

    let n = spec.state_dim;
    let mut failures = Vec::new();
    for c in start_scales(spec, tol) {
        let field = |tau: f64, p: &Matrix| -> Result<Matrix> {
            let min_eig = min_eigenvalue_sym(&upsilon_of(spec, p));
            if min_eig < -tol.residual_tol {
                return Err(RiccatiError::UpsilonSign {
                    time: -tau,
                    min_eig,
                });
            }
            are_residual(spec, p, tol)
        };
        let attempt = march(field, Matrix::identity(n, n) * c, "stationary P")
            .and_then(|p| newton_p(spec, p, tol));
        match attempt {
            Ok((p, residual)) if residual <= tol.residual_tol => {
                return finish(p, residual, PSource::Solved)
            }
            Ok((_, residual)) => {
                failures.push(format!("start {c}: Newton residual {residual:.3e}"))
            }
            Err(e) => failures.push(format!("start {c}: {e}")),
        }
    }
    Err(RiccatiError::NoSteadyState(format!(
        "no stationary P with Υ ≥ 0 from any start ({})",
        failures.join("; ")
    )))
}

/// Stationary `Π` given `P`, by backward march from zero and Newton polish.
/// Returns `Π` and the Frobenius norm of its residual.
pub fn solve_pi(spec: &ProblemSpec, p: &Matrix, tol: &Tolerance) -> Result<(Matrix, f64)> {
    let up = pinv(&upsilon_of(spec, p), tol)?;
    let q_gamma = derive_weights(spec).q_gamma;
    let res_of = |pi: &Matrix| pi_residual_with(spec, p, &up, &q_gamma, pi);
    let n = spec.state_dim;
    let mut pi = march(
        |_, x: &Matrix| Ok(res_of(x)),
        Matrix::zeros(n, n),
        "stationary Π",
    )?;
    let ag = &spec.a + &spec.g;
    let dpc = spec.d.transpose() * p * &spec.c;
    let zero = Matrix::zeros(n, n);
    let mut res = res_of(&pi);
    let mut rn = res.norm();
    for _ in 0..NEWTON_MAX_ITERS {
        if rn <= 1e-14 * (1.0 + pi.norm()) {
            break;
        }
        let f = -(&up * (spec.b.transpose() * &pi + &dpc));
        let Ok(delta) = solve_lifted_lyapunov(&(&ag + &spec.b * f), &zero, &res) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = symmetrize(&(&pi + &delta * alpha));
            let cres = res_of(&cand);
            if cres.norm() < rn {
                rn = cres.norm();
                res = cres;
                pi = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rn > tol.residual_tol {
        return Err(RiccatiError::Newton { residual: rn });
    }
    Ok((pi, rn))
}

/// `s(t) = ∫_t^∞ e^{Ãᵀ(τ−t)} φ(τ) dτ` on `[0, t_end]` with spacing `step`, for Hurwitz `Ã`.
///
/// Computed by the exact semigroup recursion `s(t_k) = e^{Ãᵀh}s(t_{k+1}) + ∫ … ` with
/// Simpson's rule on each step; beyond `t_end` the forcing is frozen at `φ(t_end)`, which
/// gives `s(t_end) = −Ã⁻ᵀφ(t_end)`. Derivatives `ṡ = −Ãᵀs − φ` are attached for Hermite
/// interpolation.
pub fn offset_backward<F>(a_cl: &Matrix, phi: F, t_end: f64, step: f64) -> Result<GridFn<Vector>>
where
    F: Fn(f64) -> Vector,
{
    let n_steps = ((t_end / step) - 1e-9).ceil().max(1.0) as usize;
    let h = step;
    let t_last = h * n_steps as f64;
    let at = a_cl.transpose();
    let e_full = (&at * h).exp();
    let e_half = (&at * (0.5 * h)).exp();
    let s_end = at
        .clone()
        .lu()
        .solve(&(-phi(t_last)))
        .ok_or_else(|| crate::linalg::LinalgError::Singular("mean-field closed loop".into()))?;
    let mut vals = vec![Vector::zeros(a_cl.nrows()); n_steps + 1];
    vals[n_steps] = s_end;
    let mut phi_next = phi(t_last);
    for k in (0..n_steps).rev() {
        let t = h * k as f64;
        let phi_here = phi(t);
        let quad = (&phi_here + &e_half * phi(t + 0.5 * h) * 4.0 + &e_full * &phi_next) * (h / 6.0);
        vals[k] = &e_full * &vals[k + 1] + quad;
        phi_next = phi_here;
    }
    let derivs = vals
        .iter()
        .enumerate()
        .map(|(k, s)| -(&at * s) - phi(h * k as f64))
        .collect();
    Ok(GridFn::with_derivs(0.0, h, vals, derivs))
}

fn tail_length(abscissa: f64, tol: &Tolerance) -> f64 {
    ((1.0 / tol.residual_tol).ln() / abscissa.abs()).min(MAX_TAIL)
}

/// Stationary solution of the infinite-horizon problem with the offset and mean-field
/// trajectories on `[0, t_sim]`.
#[derive(Debug, Clone)]
pub struct RiccatiInfiniteSolution {
    pub p: Matrix,
    pub pi: Matrix,
    pub upsilon: Matrix,
    pub upsilon_pinv: Matrix,
    pub residual_p: f64,
    pub residual_pi: f64,
    pub p_source: PSource,
    /// Mean-square verdict for the feedback `F = −Υ†(BᵀP + DᵀPC)` on `(A + BF, C + DF)`.
    pub p_stabilizing: HurwitzTest,
    /// `Ã = A + G − BΥ†(BᵀΠ + DᵀPC)`, the mean-field closed loop.
    pub a_tilde: Matrix,
    /// `C − DΥ†(BᵀΠ + DᵀPC)`.
    pub c_tilde: Matrix,
    pub mean_closed_loop: HurwitzTest,
    /// Offset on `[0, t_sim + tail]`.
    pub s: GridFn<Vector>,
    /// Mean-field state on `[0, t_sim]`.
    pub xbar: GridFn<Vector>,
    pub t_sim: f64,
    pub t_tail: f64,
}

impl RiccatiInfiniteSolution {
    /// Columns `t, s, x̄` on the mean-field grid.
    pub fn to_csv(&self) -> String {
        let n = self.p.nrows();
        let mut out = String::from("t");
        for i in 0..n {
            write!(out, ",s_{}", i + 1).unwrap();
        }
        for i in 0..n {
            write!(out, ",xbar_{}", i + 1).unwrap();
        }
        out.push('\n');
        for (k, x) in self.xbar.values.iter().enumerate() {
            let t = self.xbar.time(k);
            write!(out, "{t:.9e}").unwrap();
            for v in self.s.eval(t).iter().chain(x.iter()) {
                write!(out, ",{v:.12e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Full infinite-horizon pipeline: `P`, then `Π`, then `s`, then `x̄`.
pub fn solve_are(
    spec: &ProblemSpec,
    tol: &Tolerance,
    t_sim: f64,
) -> Result<RiccatiInfiniteSolution> {
    if spec.horizon.is_finite() {
        return Err(RiccatiError::Horizon(
            "stationary Riccati solver",
            "infinite",
        ));
    }
    let sp = solve_stationary_p(spec, tol)?;
    let up = pinv(&sp.upsilon, tol)?;
    let (pi, residual_pi) = solve_pi(spec, &sp.p, tol)?;
    let p = &sp.p;
    let l = spec.b.transpose() * &pi + spec.d.transpose() * p * &spec.c;
    let a_tilde = &spec.a + &spec.g - &spec.b * &up * &l;
    let c_tilde = &spec.c - &spec.d * &up * &l;
    let hz = is_hurwitz(&a_tilde, tol)?;
    if !hz.hurwitz {
        return Err(RiccatiError::NotHurwitz {
            what: "mean-field closed loop A + G − BΥ†(BᵀΠ + DᵀPC)",
            abscissa: hz.abscissa,
        });
    }
    let w = derive_weights(spec);
    let ctp = c_tilde.transpose() * p;
    let phi = |t: f64| &pi * spec.f.eval(t) + &ctp * spec.sigma.eval(t) - w.eta_bar(t);
    let t_tail = tail_length(hz.abscissa, tol);
    let s = offset_backward(&a_tilde, phi, t_sim + t_tail, tol.ode_step)?;

    let b_up = &spec.b * &up;
    let dtp = spec.d.transpose() * p;
    let rhs = |t: f64, x: &Vector| -> Result<Vector> {
        let off = spec.b.transpose() * s.eval(t) + &dtp * spec.sigma.eval(t);
        Ok(&a_tilde * x - &b_up * off + spec.f.eval(t))
    };
    let xbar = GridFn::from_trajectory(&integrate_ode(
        rhs,
        0.0,
        t_sim,
        spec.x0_mean.clone(),
        tol.ode_step,
    )?);

    Ok(RiccatiInfiniteSolution {
        p: sp.p,
        pi,
        upsilon: sp.upsilon,
        upsilon_pinv: up,
        residual_p: sp.residual,
        residual_pi,
        p_source: sp.source,
        p_stabilizing: sp.stabilizing,
        a_tilde,
        c_tilde,
        mean_closed_loop: hz,
        s,
        xbar,
        t_sim,
        t_tail,
    })
}

/// Stationary population-`N` pair `(P_N, K_N)` and offset `s_N(t)`.
#[derive(Debug, Clone)]
pub struct StationaryPopulation {
    pub agents: usize,
    pub p: Matrix,
    pub k: Matrix,
    pub upsilon: Matrix,
    pub upsilon_pinv: Matrix,
    pub residual: f64,
    pub closed_loop: HurwitzTest,
    pub s: GridFn<Vector>,
}

impl StationaryPopulation {
    pub fn p_tilde(&self) -> Matrix {
        &self.p + &self.k / self.agents as f64
    }
}

/// Steady state of the population-`N` equations, used as the infinite-horizon
/// centralized benchmark. Newton uses a finite-difference Jacobian on the `2n²` unknowns.
pub fn solve_are_n(
    spec: &ProblemSpec,
    tol: &Tolerance,
    t_sim: f64,
) -> Result<StationaryPopulation> {
    if spec.horizon.is_finite() {
        return Err(RiccatiError::Horizon(
            "stationary population solver",
            "infinite",
        ));
    }
    let agents = spec.agents.max(1);
    let field = BackwardField::new(spec, 1.0 / agents as f64, *tol);
    let n = spec.state_dim;
    let pack = |x: &Triple| -> Vector {
        let mut v = to_vec(&x.p).as_slice().to_vec();
        v.extend_from_slice(to_vec(&x.k).as_slice());
        Vector::from_vec(v)
    };
    let unpack = |v: &Vector| Triple {
        p: symmetrize(&from_vec(
            &Vector::from_column_slice(&v.as_slice()[..n * n]),
            n,
            n,
        )),
        k: symmetrize(&from_vec(
            &Vector::from_column_slice(&v.as_slice()[n * n..]),
            n,
            n,
        )),
        s: Vector::zeros(n),
    };
    let residual_of = |x: &Triple| -> Result<Vector> {
        let (dp, dk, _) = field.matrix_rhs(x)?;
        Ok(pack(&Triple {
            p: dp,
            k: dk,
            s: Vector::zeros(n),
        }))
    };

    let mut failures = Vec::new();
    for c in start_scales(spec, tol) {
        let mut x = Triple {
            p: Matrix::identity(n, n) * c,
            k: Matrix::zeros(n, n),
            s: Vector::zeros(n),
        };
        let mut tau = 0.0;
        let outcome: Result<()> = (|| loop {
            let pt = field.p_tilde(&x);
            let min_eig = min_eigenvalue_sym(&upsilon_of(spec, &pt));
            if min_eig < -tol.residual_tol {
                return Err(RiccatiError::UpsilonSign {
                    time: -tau,
                    min_eig,
                });
            }
            let d = residual_of(&x)?;
            if d.amax() <= MARCH_DERIV_TOL {
                return Ok(());
            }
            if tau >= MARCH_MAX_TIME {
                return Err(RiccatiError::NoSteadyState("population pair".into()));
            }
            let mut rhs = |_: f64, y: &Triple| -> Result<Triple> {
                let (dp, dk, _) = field.matrix_rhs(y)?;
                Ok(Triple {
                    p: -dp,
                    k: -dk,
                    s: Vector::zeros(n),
                })
            };
            x = rk4_step(&mut rhs, tau, &x, MARCH_STEP)?;
            x.p = symmetrize(&x.p);
            x.k = symmetrize(&x.k);
            tau += MARCH_STEP;
            if !is_finite(&x.p) || !is_finite(&x.k) || x.p.amax().max(x.k.amax()) > ESCAPE_NORM {
                return Err(RiccatiError::NoSteadyState(format!(
                    "population pair escapes at pseudo-time {tau:.3}"
                )));
            }
        })();
        if let Err(e) = outcome {
            failures.push(format!("start {c}: {e}"));
            continue;
        }

        let mut z = pack(&x);
        let mut fz = residual_of(&x)?;
        let mut rn = fz.norm();
        for _ in 0..NEWTON_MAX_ITERS {
            if rn <= 1e-14 * (1.0 + z.norm()) {
                break;
            }
            let dim = z.len();
            let mut jac = Matrix::zeros(dim, dim);
            for j in 0..dim {
                let eps = 1e-7 * (1.0 + z[j].abs());
                let mut zp = z.clone();
                zp[j] += eps;
                let mut zm = z.clone();
                zm[j] -= eps;
                let col = (residual_of(&unpack(&zp))? - residual_of(&unpack(&zm))?) / (2.0 * eps);
                jac.set_column(j, &col);
            }
            let step = -(pinv(&jac, tol)? * &fz);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = pack(&unpack(&(&z + &step * alpha)));
                let cf = residual_of(&unpack(&cand))?;
                if cf.norm() < rn {
                    rn = cf.norm();
                    fz = cf;
                    z = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if rn > tol.residual_tol {
            failures.push(format!("start {c}: Newton residual {rn:.3e}"));
            continue;
        }

        let sol = unpack(&z);
        let pt = field.p_tilde(&sol);
        let ups = upsilon_of(spec, &pt);
        let up = pinv(&ups, tol)?;
        let pk = &sol.p + &sol.k;
        let lam = spec.b.transpose() * &pk + spec.d.transpose() * &pt * &spec.c;
        let a_cl = &spec.a + &spec.g - &spec.b * &up * &lam;
        let c_cl = &spec.c - &spec.d * &up * &lam;
        let hz = is_hurwitz(&a_cl, tol)?;
        if !hz.hurwitz {
            return Err(RiccatiError::NotHurwitz {
                what: "population mean closed loop",
                abscissa: hz.abscissa,
            });
        }
        let w = derive_weights(spec);
        let ctp = c_cl.transpose() * &pt;
        let phi = |t: f64| &pk * spec.f.eval(t) + &ctp * spec.sigma.eval(t) - w.eta_bar(t);
        let s = offset_backward(
            &a_cl,
            phi,
            t_sim + tail_length(hz.abscissa, tol),
            tol.ode_step,
        )?;
        return Ok(StationaryPopulation {
            agents,
            p: sol.p,
            k: sol.k,
            upsilon: ups,
            upsilon_pinv: up,
            residual: rn,
            closed_loop: hz,
            s,
        });
    }
    Err(RiccatiError::NoSteadyState(format!(
        "no stationary population pair with Υ_N ≥ 0 ({})",
        failures.join("; ")
    )))
}

/// For scalar problems: the smallest `|residual|` of the stationary `P` equation over the
/// region `Υ > 0`, with its minimizer. Used to document problems without a real solution.
pub fn scalar_are_residual_floor(spec: &ProblemSpec, tol: &Tolerance) -> Option<(f64, f64)> {
    if spec.state_dim != 1 || spec.control_dim != 1 {
        return None;
    }
    let (r, d) = (spec.r[(0, 0)], spec.d[(0, 0)]);
    let res = |p: f64| -> f64 {
        are_residual(spec, &Matrix::from_element(1, 1, p), tol)
            .map(|m| m[(0, 0)].abs())
            .unwrap_or(f64::INFINITY)
    };
    // Υ = r + d²p > 0 ⇔ p > −r/d²; parametrize the admissible half-line logarithmically.
    let (lo, to_p): (f64, Box<dyn Fn(f64) -> f64>) = if d != 0.0 {
        let lo = -r / (d * d);
        (lo, Box::new(move |u: f64| lo + 10f64.powf(u)))
    } else if r > 0.0 {
        (
            0.0,
            Box::new(|u: f64| u.signum() * (10f64.powf(u.abs().min(20.0)) - 1.0)),
        )
    } else {
        return None;
    };
    let _ = lo;
    let (u_lo, u_hi) = if d != 0.0 { (-10.0, 6.0) } else { (-6.0, 6.0) };
    let grid = 4000;
    let mut best_u = u_lo;
    let mut best = f64::INFINITY;
    for i in 0..=grid {
        let u = u_lo + (u_hi - u_lo) * i as f64 / grid as f64;
        let v = res(to_p(u));
        if v < best {
            best = v;
            best_u = u;
        }
    }
    let width = (u_hi - u_lo) / grid as f64;
    let (mut a, mut b) = (best_u - width, best_u + width);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if res(to_p(c)) < res(to_p(e)) {
            b = e;
        } else {
            a = c;
        }
    }
    let u = 0.5 * (a + b);
    let p = to_p(u);
    Some((p, res(p).min(best)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Horizon;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64, b: f64, c: f64, d: f64, q: f64, r: f64) -> ProblemSpec {
        let m = |x| Matrix::from_element(1, 1, x);
        let mut s = ProblemSpec::zeros(1, 1, Horizon::Infinite);
        s.a = m(a);
        s.b = m(b);
        s.c = m(c);
        s.d = m(d);
        s.q = m(q);
        s.r = m(r);
        s
    }

    #[test]
    fn classical_scalar_are() {
        let sol = solve_stationary_p(
            &scalar(-1.0, 1.0, 0.0, 0.0, 1.0, 1.0),
            &Tolerance::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-8);
        assert!(sol.residual <= 1e-12);
        assert!(sol.stabilizing.hurwitz);
    }

    #[test]
    fn indefinite_scalar_picks_stabilizing_root() {
        // −2p + 1 − p²/(p − 0.1) = 0 ⇔ 3p² − 1.2p + 0.1 = 0; the larger root stabilizes
        let sol = solve_stationary_p(
            &scalar(-1.0, 1.0, 0.0, 1.0, 1.0, -0.1),
            &Tolerance::default(),
        )
        .unwrap();
        let roots = ((1.2 + 0.24f64.sqrt()) / 6.0, (1.2 - 0.24f64.sqrt()) / 6.0);
        assert_abs_diff_eq!(sol.p[(0, 0)], roots.0, epsilon = 1e-8);
        assert!(sol.stabilizing.hurwitz);
    }

    #[test]
    fn zero_weights_hurwitz_a_give_zero() {
        let mut s = presets::trivial_zero(2, 1, Horizon::Infinite);
        s.c = Matrix::zeros(2, 2);
        let sol = solve_are(&s, &Tolerance::default(), 2.0).unwrap();
        assert_eq!(sol.p.amax(), 0.0);
        assert_eq!(sol.pi.amax(), 0.0);
    }

    #[test]
    fn pinned_reference_problem_gives_reference_pi() {
        let s = presets::sec6_pinned();
        let (pi, res) = solve_pi(&s, s.pinned_p.as_ref().unwrap(), &Tolerance::default()).unwrap();
        assert_abs_diff_eq!(pi[(0, 0)], presets::SEC6_REFERENCE_PI, epsilon = 1e-3);
        assert!(res <= 1e-12);
    }

    #[test]
    fn reference_problem_has_no_stationary_p() {
        let s = presets::sec6();
        assert!(matches!(
            solve_stationary_p(&s, &Tolerance::default()),
            Err(RiccatiError::NoSteadyState(_))
        ));
        let (p, floor) = scalar_are_residual_floor(&s, &Tolerance::default()).unwrap();
        assert!(p > 0.2);
        assert!(floor > 0.1, "residual floor {floor}");
    }

    #[test]
    fn offset_of_constant_forcing_is_static() {
        let a = Matrix::from_element(1, 1, -2.0);
        let g = offset_backward(&a, |_| Vector::from_element(1, 1.0), 5.0, 1e-2).unwrap();
        for v in &g.values {
            assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn offset_of_exponential_forcing() {
        // s(t) = ∫_t^∞ e^{−2(τ−t)} e^{−τ} dτ = e^{−t}/3
        let a = Matrix::from_element(1, 1, -2.0);
        let g = offset_backward(&a, |t| Vector::from_element(1, (-t).exp()), 30.0, 1e-2).unwrap();
        for &t in &[0.0, 0.37, 2.0, 5.0] {
            assert_abs_diff_eq!(g.eval(t)[0], (-t).exp() / 3.0, epsilon = 1e-9);
        }
    }
}
