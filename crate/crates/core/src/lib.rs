//! Mean-field social control for linear-quadratic systems with multiplicative noise
//! and possibly indefinite weights.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod riccati;
pub mod rng;
pub mod simulator;
pub mod social;
pub mod stability;
pub mod synthesis;
