//! Numerical laboratory for the linear stochastic fixed-point equation
//! `X = sum_{i=1}^N A_i X_i + B` (equality in law) and its minimal solution
//! `R = sum_v L(v) B(v)` on the weighted branching tree.
//!
//! The crate classifies models through the Mellin function
//! `m(s) = E[sum A_i^s]`, simulates `R` directly, solves the Laplace-transform
//! fixed point on a grid, and estimates the critical-case tail constant
//! `C_+ = lim t^alpha P[R > t]` by two independent routes.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod laplace;
pub mod mellin;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod tail;
pub mod tilted;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
