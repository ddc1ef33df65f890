//! Exact first and second moments of a linear closed loop, integrated by RK4.
//!
//! For exchangeable agents under `u_i = Fx_i + M_p x⁽ᴺ⁾ + M_d x̄ + g` the triple
//! `μ = E x_i`, `S = E x_i x_iᵀ`, `Z = E x⁽ᴺ⁾x⁽ᴺ⁾ᵀ` is closed (and `E x_i x⁽ᴺ⁾ᵀ = Z`), so the
//! expected cost of any such law is a deterministic ODE. The simulator's Monte Carlo
//! estimates are checked against it.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::linalg::{rk4_step, LinalgError, Matrix, OdeState, Vector};
use crate::model::{Horizon, ProblemSpec};
use crate::synthesis::{ControlLaw, Coupling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCost {
    /// Expected cost of one agent (running plus terminal).
    pub per_agent: f64,
    /// `∫E‖x⁽ᴺ⁾ − x̄‖²dt`.
    pub consistency: f64,
    /// `∫(E‖x‖² + E‖u‖²)dt`.
    pub second_moment_integral: f64,
    /// `max_t E‖x(t)‖²` on the integration grid.
    pub sup_second_moment: f64,
}

#[derive(Debug, Clone)]
struct State {
    mu: Vector,
    s: Matrix,
    z: Matrix,
    /// running cost, consistency, second-moment integrals
    acc: Vector,
}

impl OdeState for State {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        State {
            mu: &self.mu + &x.mu * a,
            s: &self.s + &x.s * a,
            z: &self.z + &x.z * a,
            acc: &self.acc + &x.acc * a,
        }
    }
    fn scale(&self, a: f64) -> Self {
        State {
            mu: &self.mu * a,
            s: &self.s * a,
            z: &self.z * a,
            acc: &self.acc * a,
        }
    }
    fn norm_inf(&self) -> f64 {
        [self.mu.amax(), self.s.amax(), self.z.amax(), self.acc.amax()]
            .into_iter()
            .fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) })
    }
}

fn outer(a: &Vector, b: &Vector) -> Matrix {
    a * b.transpose()
}

/// Expected per-agent cost of `law` on `[0, T]` (`T` = the finite horizon or `t_sim`).
///
/// `agents = Some(N)` gives the population with its true coupling; `None` gives the
/// mean-field-type system where the average is `x̄`.
pub fn expected_cost(
    spec: &ProblemSpec,
    law: &ControlLaw,
    agents: Option<usize>,
    t_sim: f64,
    step: f64,
) -> Result<MomentCost, SimError> {
    let n = spec.state_dim;
    let t_end = match spec.horizon {
        Horizon::Finite(t) => t,
        Horizon::Infinite => t_sim,
    };
    let steps = ((t_end / step).round() as usize).max(1);
    let h = t_end / steps as f64;
    let pop = agents.map(|a| a as f64);
    let law_pop = law.coupling == Coupling::Population && pop.is_some();
    let (a, b, c, d, g, q, r, gam) = (&spec.a, &spec.b, &spec.c, &spec.d, &spec.g, &spec.q, &spec.r, &spec.gamma);

    // (Y, Z, ν) = (E x mᵀ, E m mᵀ, E m)
    let coupling = |st: &State, xb: &Vector| -> (Matrix, Matrix, Vector) {
        if pop.is_some() {
            (st.z.clone(), st.z.clone(), st.mu.clone())
        } else {
            (outer(&st.mu, xb), outer(xb, xb), xb.clone())
        }
    };

    let mut rhs = |t: f64, st: &State| -> Result<State, LinalgError> {
        let f_gain = law.f_self.eval(t);
        let m_gain = law.f_mf.eval(t);
        let xb = law.xbar.eval(t);
        let zero = Matrix::zeros(m_gain.nrows(), n);
        let (m_p, v) = if law_pop {
            (m_gain, law.g.eval(t))
        } else {
            (zero, &m_gain * &xb + law.g.eval(t))
        };
        let a_bar = a + b * &f_gain;
        let c_bar = c + d * &f_gain;
        let b_hat = g + b * &m_p;
        let d_hat = d * &m_p;
        let drift = b * &v + spec.f.eval(t);
        let noise = d * &v + spec.sigma.eval(t);
        let (y, z, nu) = coupling(st, &xb);

        let lin = &c_bar * &st.mu + &d_hat * &nu;
        let cross = &c_bar * &y * d_hat.transpose();
        let sig_n = &c_bar * &st.s * c_bar.transpose()
            + &cross
            + cross.transpose()
            + &d_hat * &z * d_hat.transpose()
            + outer(&lin, &noise)
            + outer(&noise, &lin)
            + outer(&noise, &noise);
        let bmu = outer(&drift, &st.mu);
        let by = &b_hat * y.transpose();
        let ds = &a_bar * &st.s + &st.s * a_bar.transpose() + &by + by.transpose() + &bmu + bmu.transpose() + &sig_n;
        let dmu = &a_bar * &st.mu + &b_hat * &nu + &drift;
        let dz = match pop {
            Some(np) => {
                let cl = &a_bar + &b_hat;
                &cl * &st.z + &st.z * cl.transpose() + &bmu + bmu.transpose() + sig_n / np
            }
            None => Matrix::zeros(n, n),
        };

        let eta = spec.eta.eval(t);
        let qg = q * gam;
        let state_cost = (q * &st.s).trace() - 2.0 * (&qg * y.transpose()).trace()
            + (gam.transpose() * &qg * &z).trace()
            - 2.0 * eta.dot(&(q * (&st.mu - gam * &nu)))
            + eta.dot(&(q * &eta));
        let fy = &f_gain * &y * m_p.transpose();
        let um = &f_gain * &st.mu + &m_p * &nu;
        let uu = &f_gain * &st.s * f_gain.transpose()
            + &fy
            + fy.transpose()
            + &m_p * &z * m_p.transpose()
            + outer(&um, &v)
            + outer(&v, &um)
            + outer(&v, &v);
        let control_cost = (r * &uu).trace();
        let cons = if pop.is_some() {
            z.trace() - 2.0 * xb.dot(&st.mu) + xb.dot(&xb)
        } else {
            0.0
        };
        Ok(State {
            mu: dmu,
            s: ds,
            z: dz,
            acc: Vector::from_vec(vec![state_cost + control_cost, cons, st.s.trace() + uu.trace()]),
        })
    };

    let cov = &spec.x0_cov;
    let m0 = &spec.x0_mean;
    let mut st = State {
        mu: m0.clone(),
        s: cov + outer(m0, m0),
        z: match pop {
            Some(np) => cov / np + outer(m0, m0),
            None => Matrix::zeros(n, n),
        },
        acc: Vector::zeros(3),
    };
    let mut sup = st.s.trace();
    for k in 0..steps {
        st = rk4_step(&mut rhs, k as f64 * h, &st, h)?;
        sup = sup.max(st.s.trace());
        if !st.norm_inf().is_finite() {
            return Err(SimError::Linalg(LinalgError::BlowUp { time: (k + 1) as f64 * h }));
        }
    }
    let mut per_agent = st.acc[0];
    if matches!(spec.horizon, Horizon::Finite(_)) {
        let xb = law.xbar.eval(t_end);
        let (y, z, nu) = coupling(&st, &xb);
        let (hw, g0, e0) = (&spec.h, &spec.gamma0, &spec.eta0);
        let hg = hw * g0;
        per_agent += (hw * &st.s).trace() - 2.0 * (&hg * y.transpose()).trace()
            + (g0.transpose() * &hg * &z).trace()
            - 2.0 * e0.dot(&(hw * (&st.mu - g0 * &nu)))
            + e0.dot(&(hw * e0));
    }
    Ok(MomentCost {
        per_agent,
        consistency: st.acc[1],
        second_moment_integral: st.acc[2],
        sup_second_moment: sup,
    })
}
