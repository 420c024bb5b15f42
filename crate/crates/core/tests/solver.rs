use std::time::Duration;

use bmme_core::backtracking::{backtracking_step, BacktrackConfig, BacktrackState};
use bmme_core::bregman::{bregman_divergence, NormPolyKernel, RelSmoothConstants};
use bmme_core::data;
use bmme_core::matcomp::McProblem;
use bmme_core::onmf::{self, OnmfProblem};
use bmme_core::solver::{
    bmm_step, bmme_step, nesterov_next, run, search_extrapolation, ExtrapolationParams, SolverConfig,
    SolverState, StopReason,
};
use bmme_core::trace::{read_csv, CSV_HEADER};
use bmme_core::{matrix, Error, Matrix};
use ndarray::Array2;
use proptest::prelude::*;

fn small_onmf(seed: u64, lambda: f64) -> (OnmfProblem, Vec<Matrix>) {
    let s = data::gen_synthetic_onmf(12, 15, 3, 0.05, seed).unwrap();
    let init = onmf::spa_init(&s.x, 3).unwrap();
    (OnmfProblem::new(s.x, 3, lambda).unwrap(), init.into_blocks())
}

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn nesterov_beta_stays_in_unit_interval(nu in 1.0..1e6f64) {
        let (next, beta) = nesterov_next(nu);
        prop_assert!(next > nu);
        prop_assert!((0.0..1.0).contains(&beta));
        prop_assert!((next - 0.5 * (1.0 + (1.0 + 4.0 * nu * nu).sqrt())).abs() <= 1e-12 * next);
    }

    #[test]
    fn accepted_extrapolation_satisfies_condition(
        x in mat(2, 3), xp in mat(2, 3), beta in 0.0..0.999f64,
        delta in 0.05..0.99f64, eta in 0.1..0.95f64, quartic in 0.0..3.0f64
    ) {
        let k = NormPolyKernel::new(quartic, 1.0).unwrap();
        let c = RelSmoothConstants::new(2.0, 0.5).unwrap();
        let ext = search_extrapolation(&x, &xp, &k, c, &k, c, beta,
            ExtrapolationParams { delta, eta, max_shrinks: 50 }).unwrap();
        let expect_bar = &x + &((&x - &xp) * ext.beta);
        prop_assert!(matrix::norm(&(&ext.x_bar - &expect_bar)) <= 1e-14 * (1.0 + matrix::norm(&x)));
        let lhs = bregman_divergence(&k, &x, &ext.x_bar).unwrap();
        let rhs = delta * 2.0 / 2.5 * bregman_divergence(&k, &xp, &x).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300 || ext.beta == 0.0);
        prop_assert!(ext.beta <= beta);
        if ext.beta > 0.0 {
            prop_assert!((ext.beta - beta * eta.powi(ext.shrinks as i32)).abs() <= 1e-12);
        }
    }

    #[test]
    fn descent_holds_on_random_onmf(seed in 0u64..1000, lambda in 0.5..500.0f64) {
        let (p, init) = small_onmf(seed, lambda);
        let config = SolverConfig::new(2).with_max_iters(40).with_tol(0.0).with_verify(true);
        let out = run(&p, init, &config).unwrap();
        prop_assert!(out.trace.records.iter().all(|r| r.descent_slack.is_some()));
    }
}

#[test]
fn bmm_is_monotone_and_never_extrapolates() {
    let (p, init) = small_onmf(4, 100.0);
    let mut state = SolverState::new(&p, init).unwrap();
    let config = SolverConfig::new(2).with_verify(true);
    let mut prev = state.objective;
    for _ in 0..100 {
        let info = bmm_step(&p, &mut state, &config).unwrap();
        assert_eq!(info.betas, vec![0.0, 0.0]);
        assert!(info.objective_after <= prev + 1e-12 * (1.0 + prev.abs()));
        prev = info.objective_after;
    }
}

#[test]
fn first_bmme_step_equals_first_bmm_step() {
    let (p, init) = small_onmf(9, 10.0);
    let config = SolverConfig::new(2);
    let mut a = SolverState::new(&p, init.clone()).unwrap();
    let mut b = SolverState::new(&p, init).unwrap();
    bmme_step(&p, &mut a, &config).unwrap();
    bmm_step(&p, &mut b, &config).unwrap();
    assert_eq!(a.current, b.current);
    assert_eq!(a.objective, b.objective);
}

#[test]
fn bmme_uses_extrapolation_after_the_first_step() {
    let (p, init) = small_onmf(2, 10.0);
    let out = run(&p, init, &SolverConfig::new(2).with_max_iters(30).with_tol(0.0)).unwrap();
    assert_eq!(out.trace.records[0].per_block_beta, vec![0.0, 0.0]);
    assert!(out.trace.records.iter().skip(1).any(|r| r.per_block_beta.iter().any(|&b| b > 0.0)));
}

#[test]
fn halved_u_constant_breaks_descent_verification() {
    // Find an instance where the halved constant is detected.
    let mut detected = false;
    for seed in 0..20 {
        let (mut p, init) = small_onmf(seed, 100.0);
        p.u_constant_scale = 0.5;
        let config = SolverConfig::new(2).with_max_iters(200).with_tol(0.0).with_verify(true);
        match run(&p, init, &config) {
            Err(Error::DescentViolation { slack, tolerance, .. }) => {
                assert!(slack < -tolerance);
                detected = true;
                break;
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => {}
        }
    }
    assert!(detected);
}

#[test]
fn config_validation_rejects_bad_parameters() {
    let (p, init) = small_onmf(1, 1.0);
    let mut bad_delta = SolverConfig::new(2);
    bad_delta.delta = vec![1.0, 0.5];
    let mut bad_eta = SolverConfig::new(2);
    bad_eta.eta = vec![0.0, 0.5];
    for config in [bad_delta, bad_eta, SolverConfig::new(1), SolverConfig::new(2).with_tol(-1.0)] {
        assert!(matches!(run(&p, init.clone(), &config), Err(Error::Argument(_))));
    }
    let bad_init = vec![init[0].mapv(|x| -x - 1.0), init[1].clone()];
    assert!(SolverState::new(&p, bad_init).is_err());
}

#[test]
fn time_budget_stops_the_run() {
    let (p, init) = small_onmf(3, 10.0);
    let config = SolverConfig::new(2)
        .with_max_iters(usize::MAX)
        .with_tol(0.0)
        .with_time_budget(Some(Duration::from_millis(30)));
    let out = run(&p, init, &config).unwrap();
    assert_eq!(out.stop_reason, StopReason::TimeBudget);
    assert!(out.trace.records.last().unwrap().elapsed_seconds >= 0.03);
}

#[test]
fn trace_csv_round_trips_through_a_file() {
    let (p, init) = small_onmf(5, 10.0);
    let out = run(&p, init, &SolverConfig::new(2).with_max_iters(25).with_tol(0.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let scale = p.data_norm_sq();
    out.trace.write_csv(std::fs::File::create(&path).unwrap(), scale).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let rows = read_csv(std::fs::File::open(&path).unwrap(), &path).unwrap();
    assert_eq!(rows.len(), 25);
    for (row, rec) in rows.iter().zip(&out.trace.records) {
        assert_eq!(row.iter, rec.iter);
        assert_eq!(row.elapsed_seconds, rec.elapsed_seconds);
        assert_eq!(row.objective, rec.objective);
        assert_eq!(row.scaled_objective, rec.objective / scale);
    }
}

#[test]
fn backtracking_inequalities_hold_on_every_step() {
    let ratings = data::gen_low_rank_ratings(20, 15, 2, 0.5, 31).unwrap();
    let p = McProblem::new(ratings.clone(), 2, 0.1, 5.0).unwrap();
    let init = data::mc_random_init(&ratings, 2, 32).unwrap();
    let config = BacktrackConfig { verify_descent: true, ..Default::default() };
    let mut state = BacktrackState::new(&p, init.pack()).unwrap();
    let kernel = bmme_core::matcomp::mc_kernel(&p);
    let mut prev_upper = config.upper_floor;
    for _ in 0..60 {
        let before = state.current.clone();
        let step = backtracking_step(&p, &mut state, &config).unwrap();
        let (f_bar, g_bar) = bmme_core::matcomp::smooth_and_grad(&p, &step.x_bar);
        let lin = |x: &Matrix| {
            bmme_core::matcomp::smooth_and_grad(&p, x).0 - f_bar - matrix::dot(&g_bar, &(x - &step.x_bar))
        };
        let tol = 1e-9 * (1.0 + f_bar.abs());
        let lower_ok = lin(&before) >= -step.lower * bregman_divergence(&kernel, &before, &step.x_bar).unwrap() - tol;
        let upper_ok =
            lin(&state.current) <= step.upper * bregman_divergence(&kernel, &state.current, &step.x_bar).unwrap() + tol;
        assert!(lower_ok && upper_ok);
        assert!(step.upper >= prev_upper && step.lower >= config.lower_floor);
        prev_upper = step.upper;
    }
}
