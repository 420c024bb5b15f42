//! Single-block BMME with backtracking on the relative smoothness constants.
//!
//! The lower constant `l^k` is grown until `D_f(x^k, x̄) ≥ −l^k·D_φ(x^k, x̄)`
//! and the extrapolation test uses `δ L^{k-1} / (L^{k-1} + l^k)`. The upper
//! constant starts at `max(L^{k-1}, L_floor)` and is grown until the new
//! iterate satisfies `D_f(x^{k+1}, x̄) ≤ L^k·D_φ(x^{k+1}, x̄)`.

use std::time::{Duration, Instant};

use crate::bregman::bregman_divergence;
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::solver::{nesterov_next, SmoothPart, StopReason, Subproblem, DEFAULT_DELTA, DEFAULT_ETA, DEFAULT_MAX_SHRINKS, DEFAULT_TOL, DESCENT_TOL};
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackConfig {
    pub delta: f64,
    pub eta: f64,
    pub max_shrinks: usize,
    /// `l⁰`.
    pub lower_floor: f64,
    /// `L⁰`.
    pub upper_floor: f64,
    pub growth: f64,
    pub max_doublings: usize,
    pub max_iters: usize,
    pub time_budget: Option<Duration>,
    pub tol_rel_change: f64,
    pub verify_descent: bool,
    pub extrapolate: bool,
}

impl Default for BacktrackConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            eta: DEFAULT_ETA,
            max_shrinks: DEFAULT_MAX_SHRINKS,
            lower_floor: 1e-3,
            upper_floor: 1e-2,
            growth: 2.0,
            max_doublings: 100,
            max_iters: 1000,
            time_budget: None,
            tol_rel_change: DEFAULT_TOL,
            verify_descent: false,
            extrapolate: true,
        }
    }
}

impl BacktrackConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.delta) || !in_unit(self.eta) {
            return Err(Error::Argument(format!(
                "delta and eta must lie in (0, 1), got {} and {}",
                self.delta, self.eta
            )));
        }
        if !(self.lower_floor > 0.0 && self.upper_floor > 0.0 && self.growth > 1.0) {
            return Err(Error::Argument(
                "backtracking floors must be positive and growth > 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BacktrackState {
    pub current: Matrix,
    pub previous: Matrix,
    /// `L^{k-1}`; `None` before the first step.
    pub upper: Option<f64>,
    /// `l^{k-1}`; `None` before the first step.
    pub lower: Option<f64>,
    pub nesterov_nu: f64,
    pub iter: usize,
    pub objective: f64,
    pub elapsed: Duration,
    pub trace: Trace,
}

impl BacktrackState {
    pub fn new<P: SmoothPart>(problem: &P, init: Matrix) -> Result<Self> {
        if problem.num_blocks() != 1 {
            return Err(Error::Argument(format!(
                "backtracking BMME needs a single block, problem has {}",
                problem.num_blocks()
            )));
        }
        if !matrix::all_finite(&init) || !problem.is_feasible(0, &init) {
            return Err(Error::Argument("initial point is infeasible or not finite".into()));
        }
        let objective = problem.objective(std::slice::from_ref(&init));
        Ok(Self {
            previous: init.clone(),
            current: init,
            upper: None,
            lower: None,
            nesterov_nu: 1.0,
            iter: 0,
            objective,
            elapsed: Duration::ZERO,
            trace: Trace::new(),
        })
    }
}

/// Everything needed to re-check an accepted backtracking step.
#[derive(Debug, Clone)]
pub struct BacktrackStep {
    pub beta: f64,
    pub shrinks: usize,
    pub x_bar: Matrix,
    pub upper: f64,
    pub lower: f64,
    pub upper_doublings: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub descent_slack: Option<f64>,
}

/// Allowance for roundoff in the two backtracking tests, relative to `|f(x̄)|`.
pub const BACKTRACK_ROUNDOFF: f64 = 1e-12;

fn linearization_error(f_x: f64, f_y: f64, grad_y: &Matrix, x: &Matrix, y: &Matrix) -> f64 {
    f_x - f_y - matrix::dot(grad_y, &(x - y))
}

pub fn backtracking_step<P: SmoothPart>(
    problem: &P,
    state: &mut BacktrackState,
    config: &BacktrackConfig,
) -> Result<BacktrackStep> {
    let started = Instant::now();
    let kernel = problem.kernel(std::slice::from_ref(&state.current), 0);
    let (nu, beta_init) = if config.extrapolate {
        nesterov_next(state.nesterov_nu)
    } else {
        (state.nesterov_nu, 0.0)
    };
    let prev_upper = state.upper.unwrap_or(config.upper_floor);
    let prev_lower = state.lower.unwrap_or(config.lower_floor).max(config.lower_floor);
    let prev_divergence = bregman_divergence(&kernel, &state.previous, &state.current)?;
    let f_current = problem.smooth_value(std::slice::from_ref(&state.current));
    let step = &state.current - &state.previous;

    let mut beta = beta_init;
    let mut shrinks = 0;
    let (x_bar, lower) = loop {
        let x_bar = if beta > 0.0 { &state.current + &(&step * beta) } else { state.current.clone() };
        let bar = std::slice::from_ref(&x_bar);
        let f_bar = problem.smooth_value(bar);
        let grad_bar = problem.partial_grad(bar, 0);
        let d_phi = bregman_divergence(&kernel, &state.current, &x_bar)?;
        let d_f = linearization_error(f_current, f_bar, &grad_bar, &state.current, &x_bar);
        let allowance = BACKTRACK_ROUNDOFF * (1.0 + f_bar.abs());
        let mut lower = prev_lower;
        let mut doublings = 0;
        while d_f < -lower * d_phi - allowance {
            if doublings == config.max_doublings {
                return Err(Error::BacktrackingExhausted { doublings });
            }
            lower *= config.growth;
            doublings += 1;
        }
        if beta == 0.0 {
            break (x_bar, lower);
        }
        if d_phi <= config.delta * prev_upper / (prev_upper + lower) * prev_divergence {
            break (x_bar, lower);
        }
        if shrinks == config.max_shrinks {
            beta = 0.0;
        } else {
            beta *= config.eta;
            shrinks += 1;
        }
    };

    let bar = std::slice::from_ref(&x_bar);
    let f_bar = problem.smooth_value(bar);
    let grad_bar = problem.partial_grad(bar, 0);
    let allowance = BACKTRACK_ROUNDOFF * (1.0 + f_bar.abs());
    let mut upper = prev_upper.max(config.upper_floor);
    let mut upper_doublings = 0;
    let next = loop {
        let candidate = problem.solve_subproblem(Subproblem {
            block: 0,
            blocks: std::slice::from_ref(&state.current),
            kernel: &kernel,
            x_bar: &x_bar,
            grad: &grad_bar,
            upper,
            current: &state.current,
        });
        if !matrix::all_finite(&candidate) || !problem.is_feasible(0, &candidate) {
            return Err(Error::Infeasible { block: 0, iter: state.iter });
        }
        let f_next = problem.smooth_value(std::slice::from_ref(&candidate));
        let d_f = linearization_error(f_next, f_bar, &grad_bar, &candidate, &x_bar);
        let d_phi = bregman_divergence(&kernel, &candidate, &x_bar)?;
        if d_f <= upper * d_phi + allowance {
            break candidate;
        }
        if upper_doublings == config.max_doublings {
            return Err(Error::BacktrackingExhausted { doublings: upper_doublings });
        }
        upper *= config.growth;
        upper_doublings += 1;
    };

    let objective_after = problem.objective(std::slice::from_ref(&next));
    if !objective_after.is_finite() {
        return Err(Error::Numeric("objective is not finite after backtracking step".into()));
    }
    let mut verify_time = Duration::ZERO;
    let descent_slack = if config.verify_descent {
        let t = Instant::now();
        // F⁺ ≤ F − L^k D(x^k, x^{k+1}) + (L^k + l^k) D(x^k, x̄)
        let decrease = upper * bregman_divergence(&kernel, &state.current, &next)?;
        let carry = (upper + lower) * bregman_divergence(&kernel, &state.current, &x_bar)?;
        let slack = state.objective - decrease + carry - objective_after;
        let tolerance = DESCENT_TOL * (1.0 + state.objective.abs());
        verify_time = t.elapsed();
        if slack < -tolerance {
            return Err(Error::DescentViolation { iter: state.iter + 1, slack, tolerance });
        }
        Some(slack)
    } else {
        None
    };

    let info = BacktrackStep {
        beta,
        shrinks,
        x_bar,
        upper,
        lower,
        upper_doublings,
        objective_before: state.objective,
        objective_after,
        descent_slack,
    };
    state.previous = std::mem::replace(&mut state.current, next);
    state.upper = Some(upper);
    state.lower = Some(lower);
    state.nesterov_nu = nu;
    state.iter += 1;
    state.objective = objective_after;
    state.elapsed += started.elapsed().saturating_sub(verify_time);
    state.trace.push(TraceRecord {
        iter: state.iter,
        elapsed_seconds: state.elapsed.as_secs_f64(),
        objective: objective_after,
        per_block_beta: vec![beta],
        per_block_shrinks: vec![shrinks],
        descent_slack,
    });
    Ok(info)
}

#[derive(Debug, Clone)]
pub struct BacktrackOutcome {
    pub final_point: Matrix,
    pub trace: Trace,
    pub stop_reason: StopReason,
    pub final_objective: f64,
    pub final_upper: Option<f64>,
}

pub fn run_backtracking<P: SmoothPart>(
    problem: &P,
    init: Matrix,
    config: &BacktrackConfig,
) -> Result<BacktrackOutcome> {
    config.validate()?;
    let mut state = BacktrackState::new(problem, init)?;
    let mut stop_reason = StopReason::MaxIters;
    while state.iter < config.max_iters {
        if config.time_budget.is_some_and(|b| state.elapsed >= b) {
            stop_reason = StopReason::TimeBudget;
            break;
        }
        let info = backtracking_step(problem, &mut state, config)?;
        let change = (info.objective_after - info.objective_before).abs();
        if change <= config.tol_rel_change * (1.0 + info.objective_before.abs()) {
            stop_reason = StopReason::TolReached;
            break;
        }
    }
    Ok(BacktrackOutcome {
        final_objective: state.objective,
        final_upper: state.upper,
        final_point: state.current,
        trace: state.trace,
        stop_reason,
    })
}
