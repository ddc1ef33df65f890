use serde::{Deserialize, Serialize};

use super::{psi_of, RiccatiFiniteSolution, RiccatiInfiniteSolution};
use crate::linalg::{pinv, range_residual, Matrix, Tolerance};
use crate::model::ProblemSpec;

/// One range inclusion `X ∈ R(Υ)` with its worst projection residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeCheck {
    pub name: String,
    pub holds: bool,
    /// Largest `‖(I − ΥΥ†)X‖` encountered.
    pub residual: f64,
    /// Grid time of the worst residual (finite horizon and offset checks).
    pub worst_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub checks: Vec<RangeCheck>,
    pub all_hold: bool,
}

impl RangeReport {
    fn from_checks(checks: Vec<RangeCheck>) -> Self {
        let all_hold = checks.iter().all(|c| c.holds);
        Self { checks, all_hold }
    }

    pub fn failing(&self) -> Option<&RangeCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

/// `X ∈ R(Υ)` iff `‖(I − ΥΥ†)X‖ ≤ residual_tol·(1 + ‖X‖)`. Returns the verdict and residual.
pub fn range_inclusion(
    upsilon: &Matrix,
    upsilon_pinv: &Matrix,
    x: &Matrix,
    tol: &Tolerance,
) -> (bool, f64) {
    let res = range_residual(upsilon, upsilon_pinv, x);
    (res <= tol.residual_tol * (1.0 + x.norm()), res)
}

struct Accumulator {
    name: &'static str,
    holds: bool,
    residual: f64,
    worst_time: Option<f64>,
}

impl Accumulator {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            holds: true,
            residual: 0.0,
            worst_time: None,
        }
    }

    fn push(&mut self, t: Option<f64>, ups: &Matrix, up: &Matrix, x: &Matrix, tol: &Tolerance) {
        let (ok, res) = range_inclusion(ups, up, x, tol);
        self.holds &= ok;
        if res > self.residual || self.worst_time.is_none() {
            self.residual = self.residual.max(res);
            self.worst_time = t;
        }
    }

    fn finish(self) -> RangeCheck {
        RangeCheck {
            name: self.name.to_string(),
            holds: self.holds,
            residual: self.residual,
            worst_time: self.worst_time,
        }
    }
}

/// Checks `BᵀP + DᵀP̃C`, `BᵀK` and `Bᵀs + DᵀP̃σ` against `R(Υ)` at every knot.
pub fn check_ranges_finite(
    sol: &RiccatiFiniteSolution,
    spec: &ProblemSpec,
    tol: &Tolerance,
) -> RangeReport {
    let mut psi = Accumulator::new("B'P + D'PC");
    let mut bk = Accumulator::new("B'K");
    let mut off = Accumulator::new("B's + D'P sigma");
    let bt = spec.b.transpose();
    for (i, &t) in sol.times.iter().enumerate() {
        let ups = &sol.upsilon[i];
        let Ok(up) = pinv(ups, tol) else {
            continue;
        };
        let pt = sol.p_tilde(i);
        psi.push(Some(t), ups, &up, &psi_of(spec, &sol.p[i], &pt), tol);
        bk.push(Some(t), ups, &up, &(&bt * &sol.k[i]), tol);
        let o = &bt * &sol.s[i] + spec.d.transpose() * &pt * spec.sigma.eval(t);
        off.push(
            Some(t),
            ups,
            &up,
            &Matrix::from_column_slice(o.len(), 1, o.as_slice()),
            tol,
        );
    }
    RangeReport::from_checks(vec![psi.finish(), bk.finish(), off.finish()])
}

/// Checks `BᵀP + DᵀPC`, `Bᵀ(Π − P)` once and `Bᵀs(t) + DᵀPσ(t)` along the offset grid.
pub fn check_ranges_infinite(
    sol: &RiccatiInfiniteSolution,
    spec: &ProblemSpec,
    tol: &Tolerance,
) -> RangeReport {
    let (ups, up) = (&sol.upsilon, &sol.upsilon_pinv);
    let mut psi = Accumulator::new("B'P + D'PC");
    psi.push(None, ups, up, &psi_of(spec, &sol.p, &sol.p), tol);
    let mut bpi = Accumulator::new("B'(Pi - P)");
    bpi.push(
        None,
        ups,
        up,
        &(spec.b.transpose() * (&sol.pi - &sol.p)),
        tol,
    );
    let mut off = Accumulator::new("B's + D'P sigma");
    let dtp = spec.d.transpose() * &sol.p;
    for (k, s) in sol.s.values.iter().enumerate() {
        let t = sol.s.time(k);
        if t > sol.t_sim + 1e-12 {
            break;
        }
        let o = spec.b.transpose() * s + &dtp * spec.sigma.eval(t);
        off.push(
            Some(t),
            ups,
            up,
            &Matrix::from_column_slice(o.len(), 1, o.as_slice()),
            tol,
        );
    }
    RangeReport::from_checks(vec![psi.finish(), bpi.finish(), off.finish()])
}
