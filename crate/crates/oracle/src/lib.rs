//! Slow, independently coded reference computations used to cross-check
//! `bmme-core`. Everything here is written against nalgebra from the
//! defining formulas and solved iteratively or by brute force, never by the
//! closed forms the core uses.

use nalgebra::DMatrix;
use ndarray::Array2;

pub type Dense = DMatrix<f64>;

pub fn to_na(a: &Array2<f64>) -> Dense {
    Dense::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(a: &Dense) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Largest eigenvalue of a symmetric matrix via a full symmetric
/// eigendecomposition.
pub fn largest_eigenvalue(m: &Array2<f64>) -> f64 {
    let sym = to_na(m);
    let sym = (&sym + sym.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `½‖X − UV‖² + λ/2‖VV^T − I‖²` summed entry by entry.
pub fn onmf_objective(x: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, lambda: f64) -> f64 {
    let (m, n) = x.dim();
    let r = u.ncols();
    let mut fit = 0.0;
    for i in 0..m {
        for j in 0..n {
            let model: f64 = (0..r).map(|k| u[[i, k]] * v[[k, j]]).sum();
            fit += (x[[i, j]] - model).powi(2);
        }
    }
    let mut orth = 0.0;
    for a in 0..r {
        for b in 0..r {
            let g: f64 = (0..n).map(|j| v[[a, j]] * v[[b, j]]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            orth += (g - target).powi(2);
        }
    }
    0.5 * fit + 0.5 * lambda * orth
}

/// Quantities shared by the ONMF gradient oracles.
fn onmf_grads(x: &Dense, u: &Dense, v: &Dense, lambda: f64) -> (Dense, Dense) {
    let residual = u * v - x;
    let gu = &residual * v.transpose();
    let eye = Dense::identity(v.nrows(), v.nrows());
    let gv = u.transpose() * &residual + (v * v.transpose() - eye) * v * (2.0 * lambda);
    (gu, gv)
}

pub struct PgResult {
    pub solution: Array2<f64>,
    pub stationarity: f64,
    pub iterations: usize,
}

/// Projected gradient on a convex function given by its gradient, over
/// `x ≥ 0` (or the whole space when `nonneg` is false). The step is
/// backtracked on the local Lipschitz test
/// `<∇h(x⁺) − ∇h(x), x⁺ − x> ≤ ‖x⁺ − x‖²/t`, which uses no function values
/// and so does not stall on roundoff. Stops once `‖x − P(x − ∇h(x))‖ ≤ tol`.
fn projected_gradient<G>(grad: G, start: Dense, nonneg: bool, tol: f64, max_iters: usize) -> PgResult
where
    G: Fn(&Dense) -> Dense,
{
    let project = |z: Dense| if nonneg { z.map(|t| t.max(0.0)) } else { z };
    let step_to = |x: &Dense, g: &Dense, t: f64| project(x - g * t);
    let mut x = project(start);
    let mut g = grad(&x);
    let mut step = 1.0;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        stationarity = (&x - project(&x - &g)).norm();
        if stationarity <= tol {
            break;
        }
        step *= 2.0;
        let (trial, g_trial) = loop {
            let trial = step_to(&x, &g, step);
            let g_trial = grad(&trial);
            let d = &trial - &x;
            if (&g_trial - &g).dot(&d) * step <= d.norm_squared() || step < 1e-300 {
                break (trial, g_trial);
            }
            step *= 0.5;
        };
        x = trial;
        g = g_trial;
        iterations += 1;
    }
    PgResult { solution: from_na(&x), stationarity, iterations }
}

/// Minimizes `<∇_U f(Ū, V), U> + L₁/2‖U − Ū‖²` over `U ≥ 0` by projected
/// gradient.
pub fn onmf_u_subproblem(
    x: &Array2<f64>,
    u_bar: &Array2<f64>,
    v: &Array2<f64>,
    lambda: f64,
    l1: f64,
    tol: f64,
) -> PgResult {
    let (x, ub, v) = (to_na(x), to_na(u_bar), to_na(v));
    let (gu, _) = onmf_grads(&x, &ub, &v, lambda);
    let grad = |u: &Dense| &gu + (u - &ub) * l1;
    projected_gradient(grad, ub.clone(), true, tol, 1_000_000)
}

/// Minimizes `<∇_V f(U, V̄), V> + L₂·D_φ(V, V̄)` over `V ≥ 0` with
/// `φ(V) = 6λ‖V‖⁴/4 + ε‖V‖²/2`, `ε = max(λ_max(U^T U), 2λ)`.
pub fn onmf_v_subproblem(
    x: &Array2<f64>,
    u: &Array2<f64>,
    v_bar: &Array2<f64>,
    lambda: f64,
    l2: f64,
    tol: f64,
) -> PgResult {
    let (x, un, vb) = (to_na(x), to_na(u), to_na(v_bar));
    let (_, gv) = onmf_grads(&x, &un, &vb, lambda);
    let gram = un.transpose() * &un;
    let eps = gram.symmetric_eigen().eigenvalues.max().max(2.0 * lambda);
    let a = 6.0 * lambda;
    let grad_phi = |z: &Dense| z * (a * z.norm_squared() + eps);
    let linear = &gv - grad_phi(&vb) * l2;
    let grad = |z: &Dense| &linear + grad_phi(z) * l2;
    projected_gradient(grad, vb.clone(), true, tol, 1_000_000)
}

/// Observed-entry least squares `½Σ(A_ij − (UV)_ij)²`.
pub fn mc_data_term(obs: &[(usize, usize, f64)], u: &Array2<f64>, v: &Array2<f64>) -> f64 {
    obs.iter()
        .map(|&(i, j, a)| {
            let model: f64 = (0..u.ncols()).map(|k| u[[i, k]] * v[[k, j]]).sum();
            0.5 * (a - model).powi(2)
        })
        .sum()
}

pub fn mc_regularizer(u: &Array2<f64>, v: &Array2<f64>, lambda: f64, theta: f64) -> f64 {
    let g = |t: &f64| 1.0 - (-theta * t.abs()).exp();
    lambda * (u.iter().map(g).sum::<f64>() + v.iter().map(g).sum::<f64>())
}

pub fn mc_objective(obs: &[(usize, usize, f64)], u: &Array2<f64>, v: &Array2<f64>, lambda: f64, theta: f64) -> f64 {
    mc_data_term(obs, u, v) + mc_regularizer(u, v, lambda, theta)
}

/// Partial gradients of the observed-entry least squares term.
pub fn mc_grads(obs: &[(usize, usize, f64)], u: &Array2<f64>, v: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut gu = Array2::zeros(u.dim());
    let mut gv = Array2::zeros(v.dim());
    for &(i, j, a) in obs {
        let model: f64 = (0..u.ncols()).map(|k| u[[i, k]] * v[[k, j]]).sum();
        let res = model - a;
        for k in 0..u.ncols() {
            gu[[i, k]] += res * v[[k, j]];
            gv[[k, j]] += res * u[[i, k]];
        }
    }
    (gu, gv)
}

/// `c₁(s/2)² + c₂s/2` with `s = ‖U‖² + ‖V‖²`.
pub fn mc_kernel_value(u: &Array2<f64>, v: &Array2<f64>, c1: f64, c2: f64) -> f64 {
    let s = u.iter().chain(v.iter()).map(|t| t * t).sum::<f64>();
    c1 * (s / 2.0).powi(2) + c2 * s / 2.0
}

/// Bregman divergence of `h` from its definition, with the gradient
/// supplied separately.
pub fn divergence_from_definition(
    h: impl Fn(&Array2<f64>, &Array2<f64>) -> f64,
    grad_at_y: (&Array2<f64>, &Array2<f64>),
    x: (&Array2<f64>, &Array2<f64>),
    y: (&Array2<f64>, &Array2<f64>),
) -> f64 {
    let inner: f64 = grad_at_y.0.iter().zip(x.0.iter().zip(y.0.iter())).map(|(g, (a, b))| g * (a - b)).sum::<f64>()
        + grad_at_y.1.iter().zip(x.1.iter().zip(y.1.iter())).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
    h(x.0, x.1) - h(y.0, y.1) - inner
}

pub struct McSubproblemInput<'a> {
    pub obs: &'a [(usize, usize, f64)],
    pub u_k: &'a Array2<f64>,
    pub v_k: &'a Array2<f64>,
    pub u_bar: &'a Array2<f64>,
    pub v_bar: &'a Array2<f64>,
    pub lambda: f64,
    pub theta: f64,
    pub c1: f64,
    pub c2: f64,
    pub upper: f64,
}

/// Minimizes `<W, |x|> + <∇f(x̄) − L∇φ(x̄), x> + Lφ(x)` over the joint
/// `(U, V)` by proximal gradient with backtracking, `W` taken at `x^k`.
/// Returns `(U, V, stationarity)`.
pub fn mc_subproblem(input: &McSubproblemInput<'_>, tol: f64) -> (Array2<f64>, Array2<f64>, f64) {
    let (m, r) = input.u_k.dim();
    let n = input.v_k.ncols();
    // Flatten (U, V) into one (m·r + r·n) column.
    let flat = |u: &Array2<f64>, v: &Array2<f64>| {
        Dense::from_iterator(m * r + r * n, 1, u.iter().cloned().chain(v.iter().cloned()))
    };
    let split = |z: &Dense| {
        let u = Array2::from_shape_vec((m, r), z.as_slice()[..m * r].to_vec()).unwrap();
        let v = Array2::from_shape_vec((r, n), z.as_slice()[m * r..].to_vec()).unwrap();
        (u, v)
    };
    let (c1, c2, big_l) = (input.c1, input.c2, input.upper);
    let w = flat(input.u_k, input.v_k).map(|t| input.lambda * input.theta * (-input.theta * t.abs()).exp());
    let (gu, gv) = mc_grads(input.obs, input.u_bar, input.v_bar);
    let bar = flat(input.u_bar, input.v_bar);
    let grad_phi = |z: &Dense| z * (c1 * z.norm_squared() + c2);
    let linear = flat(&gu, &gv) - grad_phi(&bar) * big_l;
    let smooth_grad = |z: &Dense| &linear + grad_phi(z) * big_l;
    let prox = |z: &Dense, t: f64| {
        Dense::from_fn(z.nrows(), 1, |k, _| {
            let thr = t * w[k];
            let a = z[k];
            if a > thr {
                a - thr
            } else if a < -thr {
                a + thr
            } else {
                0.0
            }
        })
    };

    // Proximal gradient with the same gradient-only step test as
    // `projected_gradient`.
    let mut x = bar.clone();
    let mut g = smooth_grad(&x);
    let mut step = 1.0 / (big_l * c2);
    let mut stationarity = f64::INFINITY;
    for _ in 0..1_000_000 {
        stationarity = (&x - prox(&(&x - &g), 1.0)).norm();
        if stationarity <= tol {
            break;
        }
        step *= 2.0;
        loop {
            let trial = prox(&(&x - &g * step), step);
            let g_trial = smooth_grad(&trial);
            let d = &trial - &x;
            if (&g_trial - &g).dot(&d) * step <= d.norm_squared() || step < 1e-300 {
                x = trial;
                g = g_trial;
                break;
            }
            step *= 0.5;
        }
    }
    let (u, v) = split(&x);
    (u, v, stationarity)
}

/// Root of an increasing function on `[lo, hi]` by bisection to machine
/// resolution.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) <= 0.0 && f(hi) >= 0.0, "root not bracketed");
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return if f(lo).abs() <= f(hi).abs() { lo } else { hi };
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Positive root of `ρ²(ρ − a) = c`, bracketed in `[a, a + ∛c + 1]`.
pub fn rho_bisection(a: f64, c: f64) -> f64 {
    bisect(|t| t * t * (t - a) - c, a, a + c.cbrt() + 1.0)
}

/// Positive root of `c₁sτ³ + c₂τ − 1 = 0` on `[0, 1/c₂]`.
pub fn tau_bisection(c1: f64, c2: f64, s: f64) -> f64 {
    bisect(|t| c1 * s * t * t * t + c2 * t - 1.0, 0.0, 1.0 / c2)
}

/// Best fraction of matches over all `r!` relabelings of `pred`.
pub fn brute_force_accuracy(truth: &[usize], pred: &[usize], r: usize) -> f64 {
    let mut perm: Vec<usize> = (0..r).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = truth.iter().zip(pred).filter(|(&t, &q)| p[q] == t).count();
        best = best.max(hits);
    });
    best as f64 / truth.len() as f64
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bisection_roots() {
        assert!((rho_bisection(1.0, 0.0) - 1.0).abs() < 1e-15);
        // ρ = 2, a = 1: c = 4.
        assert!((rho_bisection(1.0, 4.0) - 2.0).abs() < 1e-14);
        assert!((tau_bisection(3.0, 1.0, 4.0 / 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0], 2), 1.0);
        assert_eq!(brute_force_accuracy(&[0, 1, 2, 0], &[0, 0, 0, 0], 3), 0.5);
    }

    #[test]
    fn eigenvalue_of_diagonal() {
        assert!((largest_eigenvalue(&array![[2.0, 0.0], [0.0, 5.0]]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn u_oracle_solves_unconstrained_case() {
        // With positive targets the projection is inactive: U = Ū − ∇/L₁.
        let x = array![[4.0, 1.0], [2.0, 3.0]];
        let ub = array![[1.0], [1.0]];
        let v = array![[1.0, 0.0]];
        let r = onmf_u_subproblem(&x, &ub, &v, 0.0, 1.0, 1e-12);
        assert!((r.solution[[0, 0]] - 4.0).abs() < 1e-10);
        assert!((r.solution[[1, 0]] - 2.0).abs() < 1e-10);
    }
}
