//! Dense matrix helpers.
//!
//! Every matrix in the crate is an `ndarray::Array2<f64>`. The helpers here
//! add the Frobenius-geometry operations the solvers lean on and a checked
//! constructor enforcing finite entries.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Builds a `rows × cols` matrix from row-major data, rejecting empty
/// shapes and non-finite entries.
pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Argument(format!("matrix shape {rows}x{cols} is empty")));
    }
    if data.len() != rows * cols {
        return Err(Error::Argument(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "entry ({}, {}) is not finite",
            pos / cols,
            pos % cols
        )));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Argument(e.to_string()))
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_nonnegative(m: &Matrix) -> bool {
    m.iter().all(|&v| v >= 0.0)
}

/// Frobenius inner product `<a, b>`.
pub fn dot(a: &Matrix, b: &Matrix) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

pub fn norm_sq(a: &Matrix) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn norm(a: &Matrix) -> f64 {
    norm_sq(a).sqrt()
}

/// `‖a − b‖²_F` without allocating.
pub fn dist_sq(a: &Matrix, b: &Matrix) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

pub fn positive_part(a: &Matrix) -> Matrix {
    a.mapv(|v| v.max(0.0))
}

pub(crate) fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!(
            "{what}: shape {:?} does not match {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}
