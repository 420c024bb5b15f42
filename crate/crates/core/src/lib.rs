//! Block Bregman majorization-minimization with Nesterov-type extrapolation
//! (BMME), its non-extrapolated variant (BMM), and two instances:
//! orthogonal nonnegative matrix factorization and matrix completion with
//! an exponential regularizer.

pub mod assignment;
pub mod backtracking;
pub mod bregman;
pub mod data;
pub mod error;
pub mod matcomp;
pub mod matrix;
pub mod onmf;
pub mod par;
pub mod solver;
pub mod trace;

pub use error::{Error, Result};
pub use matrix::Matrix;
