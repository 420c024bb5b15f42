//! The block Bregman majorization-minimization loop with extrapolation.
//!
//! Each outer iteration sweeps the blocks in order. For block `i` the
//! solver builds the kernel and relative smoothness constants at the
//! partially updated point `x^{k,i-1}`, searches an extrapolation parameter
//! `β` by geometric shrinking from the Nesterov value, and replaces the block
//! with the exact minimizer of the surrogate subproblem at `x̄ = x + β(x − x⁻)`.
//! With `β ≡ 0` the loop is plain block majorization-minimization.

use std::time::{Duration, Instant};

use crate::bregman::{bregman_divergence, Kernel, RelSmoothConstants};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::trace::{Trace, TraceRecord};

/// Inputs of one block subproblem
/// `argmin_{x ∈ X_i} L·D_φ(x, x̄) + <grad, x> + u(x, current)`.
pub struct Subproblem<'a, K> {
    pub block: usize,
    /// All blocks at `x^{k,i-1}`; entry `block` still holds the current value.
    pub blocks: &'a [Matrix],
    pub kernel: &'a K,
    pub x_bar: &'a Matrix,
    /// `∇_i f` at `x̄` with the other blocks taken from `blocks`.
    pub grad: &'a Matrix,
    pub upper: f64,
    pub current: &'a Matrix,
}

/// A multi-block composite problem `F = f + Σ g_i` together with its
/// kernels, relative smoothness constants and closed-form block updates.
pub trait BlockProblem {
    type Kernel: Kernel + Clone;

    fn num_blocks(&self) -> usize;

    fn objective(&self, blocks: &[Matrix]) -> f64;

    /// Partial gradient `∇_i f(blocks)`.
    fn partial_grad(&self, blocks: &[Matrix], block: usize) -> Matrix;

    /// Kernel of block `block` given the other blocks' values in `blocks`.
    fn kernel(&self, blocks: &[Matrix], block: usize) -> Self::Kernel;

    fn constants(&self, blocks: &[Matrix], block: usize) -> RelSmoothConstants;

    fn solve_subproblem(&self, sub: Subproblem<'_, Self::Kernel>) -> Matrix;

    fn is_feasible(&self, block: usize, x: &Matrix) -> bool;
}

/// Access to the smooth part `f` alone, needed when the relative smoothness
/// constants are estimated by backtracking.
pub trait SmoothPart: BlockProblem {
    fn smooth_value(&self, blocks: &[Matrix]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// `δ_i ∈ (0, 1)` per block.
    pub delta: Vec<f64>,
    /// Shrink factor `η_i ∈ (0, 1)` per block.
    pub eta: Vec<f64>,
    pub max_shrinks: usize,
    pub max_iters: usize,
    pub time_budget: Option<Duration>,
    pub tol_rel_change: f64,
    pub verify_descent: bool,
    /// `false` forces `β = 0` (BMM).
    pub extrapolate: bool,
}

pub const DEFAULT_DELTA: f64 = 0.99;
pub const DEFAULT_ETA: f64 = 0.9;
pub const DEFAULT_MAX_SHRINKS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-9;

impl SolverConfig {
    pub fn new(num_blocks: usize) -> Self {
        Self {
            delta: vec![DEFAULT_DELTA; num_blocks],
            eta: vec![DEFAULT_ETA; num_blocks],
            max_shrinks: DEFAULT_MAX_SHRINKS,
            max_iters: 1000,
            time_budget: None,
            tol_rel_change: DEFAULT_TOL,
            verify_descent: false,
            extrapolate: true,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta.iter_mut().for_each(|d| *d = delta);
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta.iter_mut().for_each(|e| *e = eta);
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_rel_change = tol;
        self
    }

    pub fn with_time_budget(mut self, budget: Option<Duration>) -> Self {
        self.time_budget = budget;
        self
    }

    pub fn with_verify(mut self, verify: bool) -> Self {
        self.verify_descent = verify;
        self
    }

    pub fn with_extrapolation(mut self, extrapolate: bool) -> Self {
        self.extrapolate = extrapolate;
        self
    }

    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        if self.delta.len() != num_blocks || self.eta.len() != num_blocks {
            return Err(Error::Argument(format!(
                "solver config has {} deltas and {} etas for {num_blocks} blocks",
                self.delta.len(),
                self.eta.len()
            )));
        }
        if let Some(d) = self.delta.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::Argument(format!("delta must lie in (0, 1), got {d}")));
        }
        if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::Argument(format!("eta must lie in (0, 1), got {e}")));
        }
        if self.tol_rel_change.is_nan() || self.tol_rel_change < 0.0 {
            return Err(Error::Argument(format!(
                "tol must be nonnegative, got {}",
                self.tol_rel_change
            )));
        }
        Ok(())
    }
}

/// Iterates `x^k`, `x^{k-1}` and the per-block quantities carried between
/// outer iterations.
#[derive(Debug, Clone)]
pub struct SolverState<K> {
    pub current: Vec<Matrix>,
    pub previous: Vec<Matrix>,
    pub prev_constants: Vec<RelSmoothConstants>,
    pub prev_kernels: Vec<K>,
    pub nesterov_nu: Vec<f64>,
    pub iter: usize,
    /// `F(x^k)`.
    pub objective: f64,
    /// Solver time so far, excluding descent verification.
    pub elapsed: Duration,
    pub trace: Trace,
}

impl<K: Kernel + Clone> SolverState<K> {
    /// Starts from `x^{-1} = x^0 = init` with `ν = 1`; the "previous"
    /// constants and kernels are those evaluated at `x^0`.
    pub fn new<P>(problem: &P, init: Vec<Matrix>) -> Result<Self>
    where
        P: BlockProblem<Kernel = K>,
    {
        let m = problem.num_blocks();
        if m == 0 {
            return Err(Error::Argument("problem has no blocks".into()));
        }
        if init.len() != m {
            return Err(Error::Argument(format!(
                "expected {m} initial blocks, got {}",
                init.len()
            )));
        }
        for (i, x) in init.iter().enumerate() {
            if !matrix::all_finite(x) {
                return Err(Error::Numeric(format!("initial block {i} has non-finite entries")));
            }
            if !problem.is_feasible(i, x) {
                return Err(Error::Argument(format!("initial block {i} is infeasible")));
            }
        }
        let prev_constants = (0..m).map(|i| problem.constants(&init, i)).collect();
        let prev_kernels = (0..m).map(|i| problem.kernel(&init, i)).collect();
        let objective = problem.objective(&init);
        if !objective.is_finite() {
            return Err(Error::Numeric("objective at the initial point is not finite".into()));
        }
        Ok(Self {
            previous: init.clone(),
            current: init,
            prev_constants,
            prev_kernels,
            nesterov_nu: vec![1.0; m],
            iter: 0,
            objective,
            elapsed: Duration::ZERO,
            trace: Trace::new(),
        })
    }
}

/// One step of the Nesterov sequence: `ν⁺ = ½(1 + √(1 + 4ν²))` and the
/// initial extrapolation parameter `(ν − 1)/ν⁺`.
pub fn nesterov_next(nu_prev: f64) -> (f64, f64) {
    let nu = 0.5 * (1.0 + (1.0 + 4.0 * nu_prev * nu_prev).sqrt());
    (nu, (nu_prev - 1.0) / nu)
}

#[derive(Debug, Clone, Copy)]
pub struct ExtrapolationParams {
    pub delta: f64,
    pub eta: f64,
    pub max_shrinks: usize,
}

#[derive(Debug, Clone)]
pub struct Extrapolation {
    pub beta: f64,
    pub x_bar: Matrix,
    pub shrinks: usize,
    /// `D_{φ^k}(x^k, x̄)` at the accepted `β`.
    pub divergence: f64,
    /// `D_{φ^{k-1}}(x^{k-1}, x^k)`.
    pub prev_divergence: f64,
    /// Right-hand side of the acceptance test.
    pub bound: f64,
}

/// Shrinks `β` from `beta_init` by `η` until
/// `D_{φ^k}(x^k, x̄) ≤ δ L^{k-1}/(L^k + l^k) · D_{φ^{k-1}}(x^{k-1}, x^k)`,
/// falling back to `β = 0` after `max_shrinks` shrinks.
#[allow(clippy::too_many_arguments)]
pub fn search_extrapolation<K: Kernel + ?Sized>(
    current: &Matrix,
    previous: &Matrix,
    kernel: &K,
    constants: RelSmoothConstants,
    prev_kernel: &K,
    prev_constants: RelSmoothConstants,
    beta_init: f64,
    params: ExtrapolationParams,
) -> Result<Extrapolation> {
    let prev_divergence = bregman_divergence(prev_kernel, previous, current)?;
    let bound = params.delta * prev_constants.upper / (constants.upper + constants.lower) * prev_divergence;
    let step = current - previous;
    let mut beta = beta_init;
    let mut shrinks = 0;
    while beta > 0.0 {
        let x_bar = current + &(&step * beta);
        let divergence = bregman_divergence(kernel, current, &x_bar)?;
        if divergence <= bound {
            return Ok(Extrapolation { beta, x_bar, shrinks, divergence, prev_divergence, bound });
        }
        if shrinks == params.max_shrinks {
            break;
        }
        beta *= params.eta;
        shrinks += 1;
    }
    Ok(Extrapolation {
        beta: 0.0,
        x_bar: current.clone(),
        shrinks,
        divergence: 0.0,
        prev_divergence,
        bound,
    })
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub objective_before: f64,
    pub objective_after: f64,
    pub betas: Vec<f64>,
    pub shrinks: Vec<usize>,
    /// `Σ_i D_{φ_i^k}(x_i^k, x_i^{k+1})`.
    pub progress: f64,
    pub descent_slack: Option<f64>,
}

/// Relative tolerance of the descent verification.
pub const DESCENT_TOL: f64 = 1e-8;

/// One outer BMME iteration. Honors `config.extrapolate`.
pub fn bmme_step<P: BlockProblem>(
    problem: &P,
    state: &mut SolverState<P::Kernel>,
    config: &SolverConfig,
) -> Result<StepInfo> {
    let started = Instant::now();
    let m = problem.num_blocks();
    let mut work = state.current.clone();
    let mut kernels = Vec::with_capacity(m);
    let mut constants_k = Vec::with_capacity(m);
    let mut betas = Vec::with_capacity(m);
    let mut shrinks = Vec::with_capacity(m);
    let mut nus = state.nesterov_nu.clone();
    // Σ L_i^k D(x_i^k, x_i^{k+1}) and Σ δ_i L_i^{k-1} D(x_i^{k-1}, x_i^k)
    let mut decrease = 0.0;
    let mut carry = 0.0;
    let mut progress = 0.0;
    let mut verify_time = Duration::ZERO;

    for i in 0..m {
        let kernel = problem.kernel(&work, i);
        let constants = problem.constants(&work, i);
        let beta_init = if config.extrapolate {
            let (nu, beta) = nesterov_next(state.nesterov_nu[i]);
            nus[i] = nu;
            beta
        } else {
            0.0
        };
        let ext = search_extrapolation(
            &state.current[i],
            &state.previous[i],
            &kernel,
            constants,
            &state.prev_kernels[i],
            state.prev_constants[i],
            beta_init,
            ExtrapolationParams {
                delta: config.delta[i],
                eta: config.eta[i],
                max_shrinks: config.max_shrinks,
            },
        )?;

        let current = std::mem::replace(&mut work[i], ext.x_bar.clone());
        let grad = problem.partial_grad(&work, i);
        work[i] = current;
        let next = problem.solve_subproblem(Subproblem {
            block: i,
            blocks: &work,
            kernel: &kernel,
            x_bar: &ext.x_bar,
            grad: &grad,
            upper: constants.upper,
            current: &state.current[i],
        });
        if !matrix::all_finite(&next) || !problem.is_feasible(i, &next) {
            return Err(Error::Infeasible { block: i, iter: state.iter });
        }

        let t = Instant::now();
        let d = bregman_divergence(&kernel, &state.current[i], &next)?;
        progress += d;
        if config.verify_descent {
            decrease += constants.upper * d;
            carry += config.delta[i] * state.prev_constants[i].upper * ext.prev_divergence;
        }
        verify_time += t.elapsed();

        work[i] = next;
        kernels.push(kernel);
        constants_k.push(constants);
        betas.push(ext.beta);
        shrinks.push(ext.shrinks);
    }

    let objective_after = problem.objective(&work);
    if !objective_after.is_finite() {
        return Err(Error::Numeric(format!(
            "objective is not finite after iteration {}",
            state.iter + 1
        )));
    }
    let descent_slack = if config.verify_descent {
        let t = Instant::now();
        let slack = state.objective - decrease + carry - objective_after;
        let tolerance = DESCENT_TOL * (1.0 + state.objective.abs());
        verify_time += t.elapsed();
        if slack < -tolerance {
            return Err(Error::DescentViolation { iter: state.iter + 1, slack, tolerance });
        }
        Some(slack)
    } else {
        None
    };

    let info = StepInfo {
        objective_before: state.objective,
        objective_after,
        betas,
        shrinks,
        progress,
        descent_slack,
    };
    state.previous = std::mem::replace(&mut state.current, work);
    state.prev_kernels = kernels;
    state.prev_constants = constants_k;
    state.nesterov_nu = nus;
    state.iter += 1;
    state.objective = objective_after;
    state.elapsed += started.elapsed().saturating_sub(verify_time);
    state.trace.push(TraceRecord {
        iter: state.iter,
        elapsed_seconds: state.elapsed.as_secs_f64(),
        objective: objective_after,
        per_block_beta: info.betas.clone(),
        per_block_shrinks: info.shrinks.clone(),
        descent_slack,
    });
    Ok(info)
}

/// One outer iteration without extrapolation.
pub fn bmm_step<P: BlockProblem>(
    problem: &P,
    state: &mut SolverState<P::Kernel>,
    config: &SolverConfig,
) -> Result<StepInfo> {
    if config.extrapolate {
        let config = config.clone().with_extrapolation(false);
        bmme_step(problem, state, &config)
    } else {
        bmme_step(problem, state, config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    TimeBudget,
    TolReached,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIters => "max_iters",
            StopReason::TimeBudget => "time_budget",
            StopReason::TolReached => "tol_reached",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_blocks: Vec<Matrix>,
    pub trace: Trace,
    pub stop_reason: StopReason,
    pub final_objective: f64,
}

/// Runs outer iterations until `max_iters`, the time budget, or a relative
/// objective change `|F⁺ − F| ≤ tol·(1 + |F|)`.
pub fn run<P: BlockProblem>(problem: &P, init: Vec<Matrix>, config: &SolverConfig) -> Result<RunOutcome> {
    config.validate(problem.num_blocks())?;
    let mut state = SolverState::new(problem, init)?;
    let stop_reason = drive(&mut state, config, |s| bmme_step(problem, s, config))?;
    Ok(RunOutcome {
        final_objective: state.objective,
        final_blocks: state.current,
        trace: state.trace,
        stop_reason,
    })
}

fn drive<K, F>(state: &mut SolverState<K>, config: &SolverConfig, mut step: F) -> Result<StopReason>
where
    F: FnMut(&mut SolverState<K>) -> Result<StepInfo>,
{
    while state.iter < config.max_iters {
        if config.time_budget.is_some_and(|b| state.elapsed >= b) {
            return Ok(StopReason::TimeBudget);
        }
        let info = step(state)?;
        let change = (info.objective_after - info.objective_before).abs();
        if change <= config.tol_rel_change * (1.0 + info.objective_before.abs()) {
            return Ok(StopReason::TolReached);
        }
    }
    Ok(StopReason::MaxIters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bregman::NormPolyKernel;
    use ndarray::array;

    /// `f(x) = ½‖x − a‖²`, `g = 0`, Euclidean kernel, single block.
    struct Shifted {
        target: Matrix,
        upper: f64,
    }

    impl BlockProblem for Shifted {
        type Kernel = NormPolyKernel;

        fn num_blocks(&self) -> usize {
            1
        }
        fn objective(&self, blocks: &[Matrix]) -> f64 {
            0.5 * matrix::dist_sq(&blocks[0], &self.target)
        }
        fn partial_grad(&self, blocks: &[Matrix], _block: usize) -> Matrix {
            &blocks[0] - &self.target
        }
        fn kernel(&self, _blocks: &[Matrix], _block: usize) -> NormPolyKernel {
            NormPolyKernel::squared_euclidean()
        }
        fn constants(&self, _blocks: &[Matrix], _block: usize) -> RelSmoothConstants {
            RelSmoothConstants::new(self.upper, 0.0).unwrap()
        }
        fn solve_subproblem(&self, sub: Subproblem<'_, NormPolyKernel>) -> Matrix {
            sub.x_bar - &(sub.grad / sub.upper)
        }
        fn is_feasible(&self, _block: usize, _x: &Matrix) -> bool {
            true
        }
    }

    fn params(delta: f64, eta: f64) -> ExtrapolationParams {
        ExtrapolationParams { delta, eta, max_shrinks: DEFAULT_MAX_SHRINKS }
    }

    #[test]
    fn nesterov_sequence() {
        let (nu, beta) = nesterov_next(1.0);
        assert!((nu - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert_eq!(beta, 0.0);

        let (nu2, beta2) = nesterov_next(nu);
        assert!((nu2 - 2.193_527_085_331_054).abs() < 1e-12);
        assert!((beta2 - 0.281_753_525_125_320_9).abs() < 1e-12);

        let mut nu = 1.0;
        for _ in 0..200 {
            let (next, beta) = nesterov_next(nu);
            assert!((0.0..1.0).contains(&beta));
            nu = next;
        }
        let (_, beta) = nesterov_next(1e8);
        assert!(beta < 1.0 && beta > 0.999_999);
    }

    #[test]
    fn extrapolation_with_stalled_iterates_keeps_initial_beta() {
        let x = array![[1.0, -2.0]];
        let k = NormPolyKernel::squared_euclidean();
        let c = RelSmoothConstants::new(1.0, 0.0).unwrap();
        let ext = search_extrapolation(&x, &x, &k, c, &k, c, 0.7, params(0.5, 0.9)).unwrap();
        assert_eq!(ext.beta, 0.7);
        assert_eq!(ext.shrinks, 0);
        assert_eq!(ext.x_bar, x);
    }

    #[test]
    fn extrapolation_quadratic_shrink_sequence() {
        // Accept the first 0.95·0.9^j not exceeding √0.81 = 0.9.
        let prev = array![[0.0, 0.0]];
        let cur = array![[0.6, 0.8]];
        let k = NormPolyKernel::squared_euclidean();
        let c = RelSmoothConstants::new(1.0, 0.0).unwrap();
        let ext = search_extrapolation(&cur, &prev, &k, c, &k, c, 0.95, params(0.81, 0.9)).unwrap();
        assert_eq!(ext.shrinks, 1);
        assert!((ext.beta - 0.855).abs() < 1e-15);
        assert!(ext.divergence <= ext.bound);
    }

    #[test]
    fn extrapolation_falls_back_to_zero() {
        let prev = array![[0.0]];
        let cur = array![[1.0]];
        let k = NormPolyKernel::squared_euclidean();
        let c = RelSmoothConstants::new(1.0, 0.0).unwrap();
        let p = ExtrapolationParams { delta: 0.5, eta: 0.99, max_shrinks: 3 };
        let ext = search_extrapolation(&cur, &prev, &k, c, &k, c, 0.99, p).unwrap();
        assert_eq!(ext.beta, 0.0);
        assert_eq!(ext.shrinks, 3);
        assert_eq!(ext.x_bar, cur);
    }

    #[test]
    fn single_gradient_step_reaches_minimizer() {
        let problem = Shifted { target: array![[1.0, -3.0], [0.5, 2.0]], upper: 1.0 };
        let mut state = SolverState::new(&problem, vec![Matrix::zeros((2, 2))]).unwrap();
        let config = SolverConfig::new(1).with_verify(true);
        let info = bmme_step(&problem, &mut state, &config).unwrap();
        assert_eq!(info.betas, vec![0.0]);
        assert_eq!(state.current[0], problem.target);
        assert_eq!(state.objective, 0.0);
    }

    #[test]
    fn degenerate_stopping_rules() {
        let problem = Shifted { target: array![[1.0]], upper: 2.0 };
        let init = vec![array![[0.0]]];

        let out = run(&problem, init.clone(), &SolverConfig::new(1).with_tol(f64::INFINITY)).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.stop_reason, StopReason::TolReached);

        let out = run(&problem, init.clone(), &SolverConfig::new(1).with_max_iters(0)).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.final_blocks, init);
        assert_eq!(out.stop_reason, StopReason::MaxIters);

        let budget = SolverConfig::new(1)
            .with_tol(0.0)
            .with_max_iters(usize::MAX)
            .with_time_budget(Some(Duration::from_millis(5)));
        // A huge L makes progress geometric with ratio 1 − 1e-9, so only the budget can stop it.
        let slow = Shifted { target: array![[1.0]], upper: 1e9 };
        let out = run(&slow, init, &budget).unwrap();
        assert_eq!(out.stop_reason, StopReason::TimeBudget);
    }

    #[test]
    fn bmm_matches_bmme_with_zero_beta() {
        let problem = Shifted { target: array![[1.0, 2.0]], upper: 3.0 };
        let config = SolverConfig::new(1).with_verify(true);
        let mut a = SolverState::new(&problem, vec![array![[0.0, 0.0]]]).unwrap();
        let mut b = a.clone();
        for _ in 0..5 {
            bmm_step(&problem, &mut a, &config).unwrap();
            // Only the first BMME step has β = 0.
        }
        bmme_step(&problem, &mut b, &config).unwrap();
        let mut c = SolverState::new(&problem, vec![array![[0.0, 0.0]]]).unwrap();
        bmm_step(&problem, &mut c, &config).unwrap();
        assert_eq!(b.current, c.current);
        assert!(a.trace.objectives().collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(2).with_delta(1.0).validate(2).is_err());
        assert!(SolverConfig::new(2).with_eta(0.0).validate(2).is_err());
        assert!(SolverConfig::new(2).validate(3).is_err());
        assert!(SolverConfig::new(2).validate(2).is_ok());
    }
}
