//! Matrix completion with an exponential regularizer,
//! `min_{U, V} ½‖P(A − UV)‖²_F + λ(Σ 1 − e^{−θ|U_ij|} + Σ 1 − e^{−θ|V_ij|})`.
//!
//! `(U, V)` is a single block. It is stored packed as the `(m + n) × r`
//! matrix `[U; V^T]`, which preserves Frobenius inner products, so the
//! kernel `c₁(‖U‖² + ‖V‖²)²/4 + c₂(‖U‖² + ‖V‖²)/2` is a [`NormPolyKernel`].
//! The regularizer is majorized by its linearization in `|U|, |V|` and the
//! resulting subproblem is solved by soft-thresholding and a cubic root.

use std::collections::HashSet;

use ndarray::s;

use crate::bregman::{Kernel, NormPolyKernel, RelSmoothConstants, Surrogate};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::solver::{BlockProblem, SmoothPart, Subproblem};

/// Sparse observations `(row, col, value)` of an `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl ObservedMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for &(i, j, v) in &entries {
            if i >= rows || j >= cols {
                return Err(Error::Argument(format!(
                    "observation ({i}, {j}) is outside a {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Numeric(format!("observation ({i}, {j}) is not finite")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Argument(format!("duplicate observation ({i}, {j})")));
            }
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `‖P(A)‖_F`.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros((self.rows, self.cols));
        for &(i, j, v) in &self.entries {
            m[[i, j]] = v;
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct McProblem {
    pub train: ObservedMatrix,
    pub rank: usize,
    pub lambda: f64,
    pub theta: f64,
    pub c1: f64,
    pub c2: f64,
}

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_THETA: f64 = 5.0;

impl McProblem {
    /// Sets `c₁ = 3` and `c₂ = ‖P(A)‖_F` over the training observations.
    pub fn new(train: ObservedMatrix, rank: usize, lambda: f64, theta: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Argument("rank must be positive".into()));
        }
        if !(lambda > 0.0 && theta > 0.0 && lambda.is_finite() && theta.is_finite()) {
            return Err(Error::Argument(format!(
                "lambda and theta must be positive, got {lambda} and {theta}"
            )));
        }
        let c2 = train.norm();
        if c2 == 0.0 {
            return Err(Error::Argument(
                "training observations have zero norm; the kernel would not be strongly convex".into(),
            ));
        }
        Ok(Self { train, rank, lambda, theta, c1: 3.0, c2 })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.train.rows(), self.train.cols())
    }

    pub fn pack(&self, s: &McState) -> Matrix {
        s.pack()
    }

    pub fn unpack(&self, packed: &Matrix) -> McState {
        McState::unpack(packed, self.train.rows())
    }

    pub fn regularizer(&self) -> ExpSurrogate {
        ExpSurrogate { lambda: self.lambda, theta: self.theta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McState {
    pub u: Matrix,
    pub v: Matrix,
}

impl McState {
    /// `[U; V^T]`.
    pub fn pack(&self) -> Matrix {
        let (m, r) = self.u.dim();
        let n = self.v.ncols();
        let mut out = Matrix::zeros((m + n, r));
        out.slice_mut(s![..m, ..]).assign(&self.u);
        out.slice_mut(s![m.., ..]).assign(&self.v.t());
        out
    }

    pub fn unpack(packed: &Matrix, m: usize) -> Self {
        Self {
            u: packed.slice(s![..m, ..]).to_owned(),
            v: packed.slice(s![m.., ..]).t().to_owned(),
        }
    }
}

/// `½‖P(A − UV)‖²` on packed factors.
fn smooth_packed(train: &ObservedMatrix, packed: &Matrix) -> f64 {
    let m = train.rows();
    0.5 * train
        .entries()
        .iter()
        .map(|&(i, j, a)| {
            let r = packed.row(i).dot(&packed.row(m + j)) - a;
            r * r
        })
        .sum::<f64>()
}

/// `(∇_U f; ∇_V f^T)` on packed factors; only observed entries contribute.
fn grad_packed(train: &ObservedMatrix, packed: &Matrix) -> Matrix {
    let m = train.rows();
    let mut grad = Matrix::zeros(packed.dim());
    for &(i, j, a) in train.entries() {
        let ui = packed.row(i);
        let vj = packed.row(m + j);
        let res = ui.dot(&vj) - a;
        grad.row_mut(i).scaled_add(res, &vj);
        grad.row_mut(m + j).scaled_add(res, &ui);
    }
    grad
}

fn exp_penalty(x: &Matrix, lambda: f64, theta: f64) -> f64 {
    lambda * x.iter().map(|v| 1.0 - (-theta * v.abs()).exp()).sum::<f64>()
}

pub fn mc_objective(p: &McProblem, s: &McState) -> f64 {
    let packed = s.pack();
    smooth_packed(&p.train, &packed) + exp_penalty(&packed, p.lambda, p.theta)
}

pub fn mc_kernel(p: &McProblem) -> NormPolyKernel {
    NormPolyKernel { quartic: p.c1, quadratic: p.c2 }
}

/// `λθ·exp(−θ|M_ij|)`.
pub fn surrogate_weights(m: &Matrix, lambda: f64, theta: f64) -> Matrix {
    m.mapv(|v| lambda * theta * (-theta * v.abs()).exp())
}

/// `S(A, B)_ij = max(|A_ij| − B_ij, 0)·sign(A_ij)` with `sign(0) = 0`.
pub fn soft_threshold(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    out.zip_mut_with(b, |x, &t| {
        let shrunk = (x.abs() - t).max(0.0);
        *x = if *x > 0.0 {
            shrunk
        } else if *x < 0.0 {
            -shrunk
        } else {
            0.0
        };
    });
    out
}

/// Residual allowed on `c₁sτ³ + c₂τ − 1` before falling back to bisection.
pub const TAU_RESIDUAL_TOL: f64 = 1e-10;

/// The unique positive root of `c₁sτ³ + c₂τ − 1 = 0`.
///
/// For `s > 0` the depressed cubic `τ³ + pτ + q` has `p > 0`, `q < 0`;
/// with `t₁ = ∛(−q/2 + √(q²/4 + p³/27))` and `t₂ = p/(3t₁)` the root
/// `t₁ − t₂` is evaluated as `−q/(t₁² + t₁t₂ + t₂²)` to avoid cancellation.
pub fn tau_star(c1: f64, c2: f64, s: f64) -> f64 {
    debug_assert!(c1 > 0.0 && c2 > 0.0 && s >= 0.0);
    if s == 0.0 {
        return 1.0 / c2;
    }
    let lead = c1 * s;
    let residual = |tau: f64| lead * tau * tau * tau + c2 * tau - 1.0;
    let p = c2 / lead;
    let q = -1.0 / lead;
    let disc = 0.25 * q * q + p * p * p / 27.0;
    let t1 = (-0.5 * q + disc.sqrt()).cbrt();
    let t2 = p / (3.0 * t1);
    let tau = -q / (t1 * t1 + t1 * t2 + t2 * t2);
    if tau.is_finite() && tau > 0.0 && residual(tau).abs() <= TAU_RESIDUAL_TOL {
        return tau;
    }
    // The residual is increasing, negative at 0 and positive at 1/c₂.
    let (mut lo, mut hi) = (0.0, 1.0 / c2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if residual(lo).abs() <= residual(hi).abs() {
        lo
    } else {
        hi
    }
}

fn solve_packed(p: &McProblem, x_bar: &Matrix, grad_bar: &Matrix, current: &Matrix, upper: f64) -> Matrix {
    let kernel = mc_kernel(p);
    let mut shifted = grad_bar.clone();
    shifted.scaled_add(-upper, &kernel.grad(x_bar));
    let weights = surrogate_weights(current, p.lambda, p.theta);
    let thresholded = soft_threshold(&shifted, &weights);
    let s = matrix::norm_sq(&thresholded) / (upper * upper);
    let tau = tau_star(p.c1, p.c2, s);
    thresholded * (-tau / upper)
}

/// Closed-form minimizer of
/// `u(x, x^k) + <∇f(x̄) − L∇φ(x̄), x> + L·φ(x)`, with the surrogate weights
/// taken at `state = x^k` and the gradients at `x_bar`.
pub fn mc_subproblem(p: &McProblem, state: &McState, x_bar: &McState, upper: f64) -> McState {
    let bar = x_bar.pack();
    let grad = grad_packed(&p.train, &bar);
    let packed = solve_packed(p, &bar, &grad, &state.pack(), upper);
    McState::unpack(&packed, p.train.rows())
}

/// `√(‖P_T(A − UV)‖² / N_T)`.
pub fn rmse(test: &ObservedMatrix, s: &McState) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Argument("RMSE needs at least one test observation".into()));
    }
    let sum: f64 = test
        .entries()
        .iter()
        .map(|&(i, j, a)| {
            let r = s.u.row(i).dot(&s.v.column(j)) - a;
            r * r
        })
        .sum();
    Ok((sum / test.len() as f64).sqrt())
}

/// The exponential regularizer with its linearized majorizer
/// `u(x, y) = g(y) + <W(y), |x| − |y|>`.
#[derive(Debug, Clone, Copy)]
pub struct ExpSurrogate {
    pub lambda: f64,
    pub theta: f64,
}

impl Surrogate for ExpSurrogate {
    fn target(&self, x: &Matrix) -> f64 {
        exp_penalty(x, self.lambda, self.theta)
    }

    fn eval(&self, x: &Matrix, y: &Matrix) -> f64 {
        let w = surrogate_weights(y, self.lambda, self.theta);
        let lin: f64 = w
            .iter()
            .zip(x.iter().zip(y.iter()))
            .map(|(w, (a, b))| w * (a.abs() - b.abs()))
            .sum();
        self.target(y) + lin
    }
}

impl BlockProblem for McProblem {
    type Kernel = NormPolyKernel;

    fn num_blocks(&self) -> usize {
        1
    }

    fn objective(&self, blocks: &[Matrix]) -> f64 {
        smooth_packed(&self.train, &blocks[0]) + exp_penalty(&blocks[0], self.lambda, self.theta)
    }

    fn partial_grad(&self, blocks: &[Matrix], _block: usize) -> Matrix {
        grad_packed(&self.train, &blocks[0])
    }

    fn kernel(&self, _blocks: &[Matrix], _block: usize) -> NormPolyKernel {
        mc_kernel(self)
    }

    fn constants(&self, _blocks: &[Matrix], _block: usize) -> RelSmoothConstants {
        RelSmoothConstants { upper: 1.0, lower: 1.0 }
    }

    fn solve_subproblem(&self, sub: Subproblem<'_, NormPolyKernel>) -> Matrix {
        solve_packed(self, sub.x_bar, sub.grad, sub.current, sub.upper)
    }

    fn is_feasible(&self, _block: usize, _x: &Matrix) -> bool {
        true
    }
}

impl SmoothPart for McProblem {
    fn smooth_value(&self, blocks: &[Matrix]) -> f64 {
        smooth_packed(&self.train, &blocks[0])
    }
}

/// Smooth part `f` and its packed gradient, exposed for verification.
pub fn smooth_and_grad(p: &McProblem, packed: &Matrix) -> (f64, Matrix) {
    (smooth_packed(&p.train, packed), grad_packed(&p.train, packed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_problem() -> McProblem {
        let obs = ObservedMatrix::new(
            3,
            2,
            vec![(0, 0, 1.0), (1, 1, -2.0), (2, 0, 0.5), (2, 1, 3.0)],
        )
        .unwrap();
        McProblem::new(obs, 2, 0.1, 5.0).unwrap()
    }

    #[test]
    fn observed_matrix_validation() {
        assert!(ObservedMatrix::new(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(ObservedMatrix::new(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(ObservedMatrix::new(2, 2, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn problem_constants() {
        let p = small_problem();
        assert_eq!(p.c1, 3.0);
        assert!((p.c2 - (1.0f64 + 4.0 + 0.25 + 9.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn objective_at_zero_is_half_sum_of_squares() {
        let p = small_problem();
        let s = McState { u: Matrix::zeros((3, 2)), v: Matrix::zeros((2, 2)) };
        assert!((mc_objective(&p, &s) - 0.5 * (1.0 + 4.0 + 0.25 + 9.0)).abs() < 1e-15);
    }

    #[test]
    fn pack_round_trip() {
        let s = McState { u: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], v: array![[7.0, 8.0], [9.0, 10.0]] };
        let packed = s.pack();
        assert_eq!(packed.dim(), (5, 2));
        assert_eq!(packed.row(3).to_vec(), vec![7.0, 9.0]);
        assert_eq!(McState::unpack(&packed, 3), s);
    }

    #[test]
    fn weights() {
        let w = surrogate_weights(&Matrix::zeros((2, 2)), 0.1, 5.0);
        assert!(w.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let w = surrogate_weights(&array![[0.2]], 0.1, 5.0);
        assert!((w[[0, 0]] - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[[0, 0]] - 0.183_940).abs() < 1e-6);
        let w = surrogate_weights(&array![[0.0, 0.5, -1.0, 3.0, 40.0]], 0.1, 5.0);
        let row: Vec<f64> = w.iter().copied().collect();
        assert!(row[0] > row[1] && row[1] > row[2] && row[2] > row[3] && row[3] > row[4]);
        assert!(row[4] < 1e-80);
    }

    #[test]
    fn soft_threshold_cases() {
        let a = array![[-3.0, 1.0]];
        assert_eq!(soft_threshold(&a, &Matrix::zeros((1, 2))), a);
        assert_eq!(soft_threshold(&a, &array![[1.0, 2.0]]), array![[-2.0, 0.0]]);
        assert_eq!(soft_threshold(&a, &array![[3.0, 1.0]]), Matrix::zeros((1, 2)));
        assert_eq!(soft_threshold(&array![[0.0]], &array![[0.0]]), array![[0.0]]);
    }

    #[test]
    fn tau_star_cases() {
        assert_eq!(tau_star(3.0, 2.0, 0.0), 0.5);
        assert!((tau_star(3.0, 1.0, 4.0 / 3.0) - 0.5).abs() < 1e-15);
        let tau = tau_star(3.0, 1e-3, 1e-14);
        assert!((3.0 * 1e-14 * tau.powi(3) + 1e-3 * tau - 1.0).abs() <= TAU_RESIDUAL_TOL);
    }

    #[test]
    fn subproblem_at_origin_is_zero() {
        let obs = ObservedMatrix::new(2, 2, vec![(0, 0, 0.0), (1, 1, 1.0)]).unwrap();
        let p = McProblem::new(obs, 1, 0.1, 5.0).unwrap();
        let zero = McState { u: Matrix::zeros((2, 1)), v: Matrix::zeros((1, 2)) };
        // Both partial gradients vanish at x̄ = 0, so P = Q = 0.
        let out = mc_subproblem(&p, &zero, &zero, 1.0);
        assert_eq!(out, zero);
    }

    #[test]
    fn rmse_cases() {
        let test = ObservedMatrix::new(2, 2, vec![(0, 1, 2.0), (1, 0, -1.0)]).unwrap();
        let zero = McState { u: Matrix::zeros((2, 1)), v: Matrix::zeros((1, 2)) };
        assert!((rmse(&test, &zero).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        let exact = McState { u: array![[1.0], [-0.5]], v: array![[2.0, 2.0]] };
        assert_eq!(rmse(&test, &exact).unwrap(), 0.0);
        let empty = ObservedMatrix::new(2, 2, vec![]).unwrap();
        assert!(rmse(&empty, &zero).is_err());
    }
}
