//! Dense linear-algebra kernel shared by every solver in the crate.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; vectorization is column-stacking,
//! which matches nalgebra's column-major storage, so `vec(M)` is a plain copy.

mod dense;
mod ode;

pub use dense::{
    asymmetry, eigenvalues, from_vec, is_finite, is_hurwitz, kron, lift_msq, min_eigenvalue_sym,
    pinv, range_residual, solve_lifted_lyapunov, spectral_abscissa, sqrt_psd, symmetrize, to_vec,
    HurwitzTest,
};
pub use ode::{integrate_ode, quadrature, rk4_step, uniform_grid, GridFn, OdeState, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// State norm beyond which an integration is treated as a finite-time escape.
pub const ESCAPE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("eigenvalue iteration failed on a {dim}x{dim} matrix (norm {norm:.3e})")]
    Eigen { dim: usize, norm: f64 },
    #[error("state blew up at t = {time}")]
    BlowUp { time: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("quadrature needs a grid with at least two points")]
    EmptyGrid,
    #[error("invalid tolerance: {0}")]
    Tolerance(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Numerical tolerances threaded through every solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Relative singular-value threshold for pseudoinverses and rank decisions.
    pub rank_cutoff: f64,
    /// Absolute residual bound used for Riccati residuals, range tests, and sign tests.
    pub residual_tol: f64,
    /// Fixed RK4 step (time units).
    pub ode_step: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rank_cutoff: 1e-10,
            residual_tol: 1e-9,
            ode_step: 1e-3,
        }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.rank_cutoff) || self.rank_cutoff >= 1.0 {
            return Err(LinalgError::Tolerance(format!(
                "rank_cutoff must lie in (0, 1), got {}",
                self.rank_cutoff
            )));
        }
        if !ok(self.residual_tol) {
            return Err(LinalgError::Tolerance(format!(
                "residual_tol must be positive, got {}",
                self.residual_tol
            )));
        }
        if !ok(self.ode_step) {
            return Err(LinalgError::Tolerance(format!(
                "ode_step must be positive, got {}",
                self.ode_step
            )));
        }
        Ok(())
    }

    pub fn with_ode_step(mut self, step: f64) -> Self {
        self.ode_step = step;
        self
    }
}
