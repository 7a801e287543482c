//! Coarse-to-fine optimization of discretized function-space problems.
//!
//! A problem over functions on an interval is sampled on a chain of nested
//! dyadic grids. The greedy and lazy drivers in [`multiscale`] solve the
//! coarsest sampling first and warm-start each finer one with the midpoint
//! interpolation of the previous answer. [`bounds`] evaluates the closed-form
//! error and cost guarantees for these drivers so they can be checked against
//! measured runs.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod constraints;
pub mod error;
pub mod functions;
pub mod grid;
pub mod multiscale;
pub mod parallel;
pub mod problems;
pub mod solver;
pub mod stats;
pub mod tensor;
pub mod tucker;

pub use error::{Error, Result};
