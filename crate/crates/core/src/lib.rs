//! Magnetic Gabor frames and the matrix calculus of magnetic Weyl operators.

// Negated float comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod frame;
mod jet;
pub mod lattice_window;
pub mod magnetic;
pub mod matrix_ops;
pub mod quadrature;
pub mod quantize;
pub mod symbols;

pub use error::{Error, Result};
pub use num_complex::Complex64;
