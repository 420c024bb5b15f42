//! Penalized orthogonal NMF:
//! `min_{U, V ≥ 0} ½‖X − UV‖²_F + (λ/2)‖I_r − VV^T‖²_F`.
//!
//! Block U uses the kernel `½‖U‖²_F` with constants `(‖VV^T‖, 0)`; block V
//! uses `(6λ/4)‖V‖⁴_F + ½ε(U)‖V‖²_F` with `ε(U) = max(‖U^T U‖, 2λ)` and
//! constants `(1, 1)`. Both block subproblems have closed-form solutions.

use ndarray::{s, Array1, Axis};

use crate::assignment::max_weight_assignment;
use crate::bregman::{NormPolyKernel, RelSmoothConstants};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::solver::{BlockProblem, Subproblem};

pub const BLOCK_U: usize = 0;
pub const BLOCK_V: usize = 1;

/// Floor on `L₁ = ‖VV^T‖` that keeps the U step finite at `V = 0`.
pub const MIN_U_CONSTANT: f64 = 1e-12;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct OnmfProblem {
    pub x: Matrix,
    pub rank: usize,
    pub lambda: f64,
    /// Multiplies `L₁`. Always 1 except for fault-injection checks.
    pub u_constant_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnmfState {
    pub u: Matrix,
    pub v: Matrix,
}

impl OnmfProblem {
    pub fn new(x: Matrix, rank: usize, lambda: f64) -> Result<Self> {
        let (m, n) = x.dim();
        if !matrix::all_finite(&x) || !matrix::all_nonnegative(&x) {
            return Err(Error::Argument("ONMF data must be finite and nonnegative".into()));
        }
        if rank == 0 || rank > m.min(n) {
            return Err(Error::Argument(format!(
                "rank {rank} must lie in [1, min({m}, {n})]"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { x, rank, lambda, u_constant_scale: 1.0 })
    }

    pub fn data_norm_sq(&self) -> f64 {
        matrix::norm_sq(&self.x)
    }
}

impl OnmfState {
    pub fn into_blocks(self) -> Vec<Matrix> {
        vec![self.u, self.v]
    }

    pub fn from_blocks(mut blocks: Vec<Matrix>) -> Self {
        assert_eq!(blocks.len(), 2, "ONMF has two blocks");
        let v = blocks.pop().unwrap();
        let u = blocks.pop().unwrap();
        Self { u, v }
    }
}

pub fn onmf_objective(p: &OnmfProblem, s: &OnmfState) -> f64 {
    objective_parts(p, &s.u, &s.v)
}

fn objective_parts(p: &OnmfProblem, u: &Matrix, v: &Matrix) -> f64 {
    let residual = &p.x - &u.dot(v);
    let mut gram = v.dot(&v.t());
    gram.diag_mut().mapv_inplace(|d| d - 1.0);
    0.5 * matrix::norm_sq(&residual) + 0.5 * p.lambda * matrix::norm_sq(&gram)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from the
/// normalized all-ones vector. Stops once the eigen-residual
/// `‖Mv − λv‖` drops below `1e-10·λ`, or after 10000 iterations.
pub fn spectral_norm(m: &Matrix) -> f64 {
    debug_assert_eq!(m.nrows(), m.ncols(), "spectral_norm needs a square matrix");
    let n = m.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = m.dot(&v);
        estimate = v.dot(&w);
        let w_norm = w.dot(&w).sqrt();
        if w_norm == 0.0 {
            return 0.0;
        }
        let residual = (&w - &(&v * estimate)).mapv(|r| r * r).sum().sqrt();
        v = w / w_norm;
        if residual <= POWER_TOL * estimate.abs() {
            break;
        }
    }
    // Rayleigh quotient of the final vector.
    v.dot(&m.dot(&v)).max(estimate)
}

pub fn onmf_constants_u(v: &Matrix) -> RelSmoothConstants {
    let upper = spectral_norm(&v.dot(&v.t())).max(MIN_U_CONSTANT);
    RelSmoothConstants { upper, lower: 0.0 }
}

pub fn onmf_constants_v() -> RelSmoothConstants {
    RelSmoothConstants { upper: 1.0, lower: 1.0 }
}

/// `ε(U) = max(‖U^T U‖, 2λ)`.
pub fn epsilon_u(u: &Matrix, lambda: f64) -> f64 {
    spectral_norm(&u.t().dot(u)).max(2.0 * lambda)
}

pub fn kernel_v(u: &Matrix, lambda: f64) -> NormPolyKernel {
    NormPolyKernel { quartic: 6.0 * lambda, quadratic: epsilon_u(u, lambda) }
}

/// `∇_U f = UVV^T − XV^T`.
pub fn grad_u(p: &OnmfProblem, u: &Matrix, v: &Matrix) -> Matrix {
    u.dot(&v.dot(&v.t())) - p.x.dot(&v.t())
}

/// `∇_V f = U^T U V − U^T X + 2λ(VV^T V − V)`.
pub fn grad_v(p: &OnmfProblem, u: &Matrix, v: &Matrix) -> Matrix {
    let mut g = u.t().dot(u).dot(v) - u.t().dot(&p.x);
    let penalty = v.dot(&v.t()).dot(v) - v;
    g.scaled_add(2.0 * p.lambda, &penalty);
    g
}

/// Exact minimizer of the block-U subproblem:
/// `max(Ū − (ŪVV^T − XV^T)/L₁, 0)`.
pub fn update_u(p: &OnmfProblem, u_bar: &Matrix, v: &Matrix, l1: f64) -> Matrix {
    project_u_step(u_bar, &grad_u(p, u_bar, v), l1)
}

fn project_u_step(u_bar: &Matrix, grad: &Matrix, l1: f64) -> Matrix {
    let mut out = u_bar - &(grad / l1);
    out.mapv_inplace(|x| x.max(0.0));
    out
}

/// `G(V̄) = ∇_V φ₂(U, V̄) − ∇_V f(U, V̄)/L₂`, in the expanded form
/// `(6λ‖V̄‖² + ε(U))V̄ − (U^T U V̄ − U^T X + 2λ(V̄V̄^T V̄ − V̄))/L₂`.
pub fn compute_g(p: &OnmfProblem, u: &Matrix, v_bar: &Matrix, l2: f64) -> Matrix {
    let eps = epsilon_u(u, p.lambda);
    let scale = 6.0 * p.lambda * matrix::norm_sq(v_bar) + eps;
    let inner = u.t().dot(u).dot(v_bar) - u.t().dot(&p.x)
        + (v_bar.dot(&v_bar.t()).dot(v_bar) - v_bar) * (2.0 * p.lambda);
    v_bar * scale - inner / l2
}

/// The unique positive root of `ρ²(ρ − a) = c` for `a, c ≥ 0`, not both 0.
///
/// Cardano's formula gives `ρ = a/3 + u₁ + u₂` with
/// `u₁ = ∛(c/2 + a³/27 + √Δ/2)`, `Δ = c² + 4ca³/27`, and since
/// `u₁u₂ = a²/9` the second cube root is evaluated as `a²/(9u₁)`, which
/// keeps every term nonnegative.
pub fn cubic_rho(a: f64, c: f64) -> Result<f64> {
    if !(a >= 0.0 && c >= 0.0 && a.is_finite() && c.is_finite()) {
        return Err(Error::Argument(format!("cubic_rho needs finite a, c >= 0, got ({a}, {c})")));
    }
    if a == 0.0 && c == 0.0 {
        return Err(Error::Argument("cubic_rho is undefined for a = c = 0".into()));
    }
    if c == 0.0 {
        return Ok(a);
    }
    let a3 = a * a * a;
    let disc = c * c + 4.0 / 27.0 * c * a3;
    let u1 = (0.5 * c + a3 / 27.0 + 0.5 * disc.sqrt()).cbrt();
    Ok(a / 3.0 + u1 + a * a / (9.0 * u1))
}

/// Exact minimizer of the block-V subproblem: `max(G, 0)/ρ` with
/// `ρ²(ρ − ε(U)) = 6λ‖max(G, 0)‖²_F`.
pub fn update_v(p: &OnmfProblem, u: &Matrix, v_bar: &Matrix, l2: f64) -> Matrix {
    let g = compute_g(p, u, v_bar, l2);
    scale_positive_part(&g, epsilon_u(u, p.lambda), p.lambda)
}

fn scale_positive_part(g: &Matrix, eps: f64, lambda: f64) -> Matrix {
    let gp = matrix::positive_part(g);
    let c = 6.0 * lambda * matrix::norm_sq(&gp);
    if c == 0.0 {
        return gp;
    }
    // eps >= 2λ > 0, so the root is well defined.
    let rho = cubic_rho(eps, c).expect("eps > 0");
    gp / rho
}

/// Successive projection: greedily picks `r` columns of `x` of maximal
/// residual norm, projecting the residual onto the orthogonal complement of
/// each pick. Ties go to the smallest index.
pub fn spa_select(x: &Matrix, r: usize) -> Result<Vec<usize>> {
    let n = x.ncols();
    if r == 0 || r > n {
        return Err(Error::Argument(format!("cannot select {r} of {n} columns")));
    }
    let mut residual = x.clone();
    let mut picked: Vec<usize> = Vec::with_capacity(r);
    for _ in 0..r {
        let norms = residual.map_axis(Axis(0), |col| col.dot(&col));
        let mut best = None;
        for (j, &nrm) in norms.iter().enumerate() {
            if picked.contains(&j) {
                continue;
            }
            if best.is_none_or(|(_, b)| nrm > b) {
                best = Some((j, nrm));
            }
        }
        let (j, nrm) = best.expect("r <= n leaves a candidate");
        if picked.is_empty() && nrm == 0.0 {
            return Err(Error::Argument("SPA needs a nonzero data matrix".into()));
        }
        picked.push(j);
        if nrm > 0.0 {
            let dir = residual.column(j).to_owned() / nrm.sqrt();
            let coeffs = dir.dot(&residual);
            for (mut col, &c) in residual.axis_iter_mut(Axis(1)).zip(coeffs.iter()) {
                col.scaled_add(-c, &dir);
            }
        }
    }
    Ok(picked)
}

/// SPA-based initialization.
///
/// The selected columns act as cluster representatives. Every column of `x`
/// is assigned to the representative of largest cosine similarity, `V₀`
/// holds the projection coefficient at that position, its rows are scaled to
/// unit norm, and `U₀ = max(XV₀^T, 0)`.
pub fn spa_init(x: &Matrix, r: usize) -> Result<OnmfState> {
    let picked = spa_select(x, r)?;
    let (_, n) = x.dim();
    let mut reps = Matrix::zeros((x.nrows(), r));
    for (k, &j) in picked.iter().enumerate() {
        let col = x.column(j);
        let nrm = col.dot(&col).sqrt();
        if nrm > 0.0 {
            reps.column_mut(k).assign(&(&col / nrm));
        }
    }
    let scores = reps.t().dot(x);
    let mut v = Matrix::zeros((r, n));
    for j in 0..n {
        let col = scores.column(j);
        let k = argmax_first(col.iter().copied());
        v[[k, j]] = col[k].max(0.0);
    }
    for mut row in v.rows_mut() {
        let nrm = row.dot(&row).sqrt();
        if nrm > 0.0 {
            row /= nrm;
        }
    }
    let u = matrix::positive_part(&x.dot(&v.t()));
    Ok(OnmfState { u, v })
}

/// `λ = ‖X − U₀V₀‖²_F / r`, the penalty used for real data sets.
pub fn default_lambda(x: &Matrix, init: &OnmfState) -> f64 {
    matrix::norm_sq(&(x - &init.u.dot(&init.v))) / init.v.nrows() as f64
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Cluster of each column: the row index of its largest entry in `V`
/// (0-based, ties to the smallest index).
pub fn predict_clusters(v: &Matrix) -> Vec<usize> {
    v.columns().into_iter().map(|col| argmax_first(col.iter().copied())).collect()
}

/// Fraction of points correctly clustered under the best matching between
/// predicted and true cluster ids (0-based ids below `r`).
pub fn clustering_accuracy(truth: &[usize], pred: &[usize], r: usize) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Argument(format!(
            "label lists differ in length ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Argument("no labels".into()));
    }
    if let Some(&bad) = truth.iter().chain(pred).find(|&&l| l >= r) {
        return Err(Error::Argument(format!("label {bad} is out of range for r = {r}")));
    }
    let mut confusion = vec![0.0; r * r];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t * r + p] += 1.0;
    }
    let assign = max_weight_assignment(r, &confusion);
    let matched: f64 = assign.iter().enumerate().map(|(t, &p)| confusion[t * r + p]).sum();
    Ok(matched / truth.len() as f64)
}

impl BlockProblem for OnmfProblem {
    type Kernel = NormPolyKernel;

    fn num_blocks(&self) -> usize {
        2
    }

    fn objective(&self, blocks: &[Matrix]) -> f64 {
        objective_parts(self, &blocks[BLOCK_U], &blocks[BLOCK_V])
    }

    fn partial_grad(&self, blocks: &[Matrix], block: usize) -> Matrix {
        match block {
            BLOCK_U => grad_u(self, &blocks[BLOCK_U], &blocks[BLOCK_V]),
            _ => grad_v(self, &blocks[BLOCK_U], &blocks[BLOCK_V]),
        }
    }

    fn kernel(&self, blocks: &[Matrix], block: usize) -> NormPolyKernel {
        match block {
            BLOCK_U => NormPolyKernel::squared_euclidean(),
            _ => kernel_v(&blocks[BLOCK_U], self.lambda),
        }
    }

    fn constants(&self, blocks: &[Matrix], block: usize) -> RelSmoothConstants {
        match block {
            BLOCK_U => {
                let c = onmf_constants_u(&blocks[BLOCK_V]);
                RelSmoothConstants { upper: c.upper * self.u_constant_scale, lower: 0.0 }
            }
            _ => onmf_constants_v(),
        }
    }

    fn solve_subproblem(&self, sub: Subproblem<'_, NormPolyKernel>) -> Matrix {
        match sub.block {
            BLOCK_U => project_u_step(sub.x_bar, sub.grad, sub.upper),
            _ => {
                let kernel = sub.kernel;
                let scale = kernel.quartic * matrix::norm_sq(sub.x_bar) + kernel.quadratic;
                let g = sub.x_bar * scale - sub.grad / sub.upper;
                scale_positive_part(&g, kernel.quadratic, self.lambda)
            }
        }
    }

    fn is_feasible(&self, _block: usize, x: &Matrix) -> bool {
        matrix::all_nonnegative(x)
    }
}

/// `rows × cols` matrix with ones on the leading diagonal.
pub fn padded_identity(rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros((rows, cols));
    let k = rows.min(cols);
    m.slice_mut(s![..k, ..k]).diag_mut().fill(1.0);
    m
}
