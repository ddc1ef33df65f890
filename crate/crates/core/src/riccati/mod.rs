//! Riccati-type equations of the social control problem.
//!
//! Finite horizon: the backward triple `(P, K, s)` of the limit problem and its
//! population-`N` counterpart, plus the forward mean-field ODE. Infinite horizon: the
//! stationary equations for `P` and `Π`, the offset `s(t)` and the mean-field state `x̄(t)`.
//! Notation shared by every solver:
//!
//! * `P̃ = P + K/N` (`P̃ = P` in the limit problem)
//! * `Υ = R + DᵀP̃D`
//! * `Ψ = BᵀP + DᵀP̃C`

mod finite;
mod ranges;
mod stationary;

pub use finite::{mean_field_finite, solve_finite_limit, solve_finite_n, RiccatiFiniteSolution};
pub use ranges::{
    check_ranges_finite, check_ranges_infinite, range_inclusion, RangeCheck, RangeReport,
};
pub use stationary::{
    are_residual, offset_backward, pi_residual, scalar_are_residual_floor, solve_are, solve_are_n,
    solve_pi, solve_stationary_p, PSource, RiccatiInfiniteSolution, StationaryP,
    StationaryPopulation,
};

use thiserror::Error;

use crate::linalg::{symmetrize, LinalgError, Matrix, OdeState, Vector};
use crate::model::ProblemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{0} needs a {1} horizon")]
    Horizon(&'static str, &'static str),
    #[error("Riccati solution escapes at t = {time:.6}: no solution on the requested horizon")]
    Escape { time: f64 },
    #[error("Υ = R + DᵀPD loses semidefiniteness at t = {time:.6} (min eigenvalue {min_eig:.3e})")]
    UpsilonSign { time: f64, min_eig: f64 },
    #[error("no steady state reached: {0}")]
    NoSteadyState(String),
    #[error("Newton polish stopped at residual {residual:.3e}")]
    Newton { residual: f64 },
    #[error(
        "{what} is not Hurwitz (spectral abscissa {abscissa:.3e}); \
         check stabilizability of (A+G, B) and that the mean-field closed loop is Hurwitz"
    )]
    NotHurwitz { what: &'static str, abscissa: f64 },
}

impl RiccatiError {
    /// Time at which a backward integration failed, if that is the failure mode.
    pub fn failure_time(&self) -> Option<f64> {
        match self {
            RiccatiError::Escape { time } | RiccatiError::UpsilonSign { time, .. } => Some(*time),
            RiccatiError::Linalg(LinalgError::BlowUp { time }) => Some(*time),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, RiccatiError>;

/// The backward unknowns `(P, K, s)` marched together by RK4.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub p: Matrix,
    pub k: Matrix,
    pub s: Vector,
}

impl OdeState for Triple {
    fn axpy(&self, a: f64, x: &Self) -> Self {
        Triple {
            p: &self.p + &x.p * a,
            k: &self.k + &x.k * a,
            s: &self.s + &x.s * a,
        }
    }
    fn scale(&self, a: f64) -> Self {
        Triple {
            p: &self.p * a,
            k: &self.k * a,
            s: &self.s * a,
        }
    }
    fn norm_inf(&self) -> f64 {
        let (a, b, c) = (self.p.norm_inf(), self.k.norm_inf(), self.s.norm_inf());
        if a.is_nan() || b.is_nan() || c.is_nan() {
            f64::NAN
        } else {
            a.max(b).max(c)
        }
    }
}

/// `R + DᵀXD`, symmetrized.
pub fn upsilon_of(spec: &ProblemSpec, x: &Matrix) -> Matrix {
    symmetrize(&(&spec.r + spec.d.transpose() * x * &spec.d))
}

/// `BᵀP + DᵀP̃C`.
pub fn psi_of(spec: &ProblemSpec, p: &Matrix, p_tilde: &Matrix) -> Matrix {
    spec.b.transpose() * p + spec.d.transpose() * p_tilde * &spec.c
}
