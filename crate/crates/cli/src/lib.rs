//! Benchmark harness, bound audit and file formats behind the `msopt` binary.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod config;
pub mod motivating;
pub mod output;
pub mod pool;
pub mod tensor_io;
pub mod tucker_bench;
