//! Deterministic numeric substrate: dense matrices, a counter-based seeded
//! RNG, power-iteration operator norms, Cholesky SPD solves, stable logistic
//! functions, and Pearson correlation. Every routine here is a pure function
//! of its inputs; values are immutable once built and safe to share across
//! threads.

mod linalg;
mod matrix;
pub mod parallel;
mod rng;
mod stats;

pub use linalg::{
    cholesky, operator_norm, operator_norm_default, solve_spd, OPERATOR_NORM_MAX_ITER,
    OPERATOR_NORM_TOL,
};
pub use matrix::{axpy, dot, norm2, norm_inf, sq_dist, sub, Matrix};
pub use rng::Rng;
pub use stats::{incomplete_beta_reg, log_sigmoid, pearson, sigmoid};
