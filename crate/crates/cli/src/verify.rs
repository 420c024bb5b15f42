//! Self-checks runnable from the command line. Each suite prints one line
//! and the command fails if any check fails.

use bmme_core::backtracking::{run_backtracking, BacktrackConfig};
use bmme_core::bregman::{check_relative_smoothness, NormPolyKernel, RelSmoothConstants, RelSmoothReport};
use bmme_core::data::{self, Rng};
use bmme_core::matcomp::{self, McProblem, McState, ObservedMatrix};
use bmme_core::onmf::{self, OnmfProblem, OnmfState};
use bmme_core::solver::{run, SolverConfig};
use bmme_core::{matrix, Error, Matrix};
use bmme_oracle as oracle;
use clap::ValueEnum;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Relsmooth,
    Descent,
    Oracles,
    Cubic,
    Accuracy,
    All,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Relsmooth => "relsmooth",
            Suite::Descent => "descent",
            Suite::Oracles => "oracles",
            Suite::Cubic => "cubic",
            Suite::Accuracy => "accuracy",
            Suite::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub samples: usize,
    pub seed: u64,
    /// Halve the U-block constant so that the descent check must fire.
    pub fault_injection: bool,
}

pub struct Outcome {
    pub suite: &'static str,
    pub pass: bool,
    pub detail: String,
}

pub fn run_suites(suite: Suite, opts: Options) -> Vec<Outcome> {
    let suites = match suite {
        Suite::All => vec![Suite::Relsmooth, Suite::Descent, Suite::Oracles, Suite::Cubic, Suite::Accuracy],
        s => vec![s],
    };
    suites
        .into_iter()
        .map(|s| {
            let mut rng = data::rng(opts.seed);
            let (pass, detail) = match s {
                Suite::Relsmooth => relsmooth(&mut rng, opts.samples),
                Suite::Descent => descent(opts),
                Suite::Oracles => oracles(&mut rng, opts.samples),
                Suite::Cubic => cubic(&mut rng, opts.samples),
                Suite::Accuracy => accuracy(&mut rng, opts.samples),
                Suite::All => unreachable!(),
            };
            Outcome { suite: s.name(), pass, detail }
        })
        .collect()
}

fn nonneg(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    data::uniform_matrix(rng, rows, cols)
}

fn signed(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || 2.0 * rng.random::<f64>() - 1.0)
}

fn random_obs(rng: &mut Rng, m: usize, n: usize) -> ObservedMatrix {
    let mut entries = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.random::<f64>() < 0.6 {
                entries.push((i, j, 6.0 * rng.random::<f64>() - 3.0));
            }
        }
    }
    if entries.is_empty() {
        entries.push((0, 0, 1.0));
    }
    ObservedMatrix::new(m, n, entries).expect("valid entries")
}

const RELSMOOTH_TOL: f64 = 1e-9;

fn relsmooth(rng: &mut Rng, samples: usize) -> (bool, String) {
    let (m, n, r) = (6, 5, 3);
    let (mut ru, mut rv, mut rm) = (RelSmoothReport::empty(), RelSmoothReport::empty(), RelSmoothReport::empty());
    for _ in 0..samples {
        let p = OnmfProblem::new(nonneg(rng, m, n), r, 0.1 + 10.0 * rng.random::<f64>()).expect("valid problem");
        let v = nonneg(rng, r, n);
        let pair = [(nonneg(rng, m, r), nonneg(rng, m, r))];
        let f = |u: &Matrix| onmf::onmf_objective(&p, &OnmfState { u: u.clone(), v: v.clone() });
        let g = |u: &Matrix| onmf::grad_u(&p, u, &v);
        let k = NormPolyKernel::squared_euclidean();
        ru = ru.merge(check_relative_smoothness(f, g, &k, onmf::onmf_constants_u(&v), &pair).expect("shapes"));

        let u = nonneg(rng, m, r);
        let pair = [(nonneg(rng, r, n), nonneg(rng, r, n))];
        let f = |v: &Matrix| onmf::onmf_objective(&p, &OnmfState { u: u.clone(), v: v.clone() });
        let g = |v: &Matrix| onmf::grad_v(&p, &u, v);
        let k = onmf::kernel_v(&u, p.lambda);
        rv = rv.merge(check_relative_smoothness(f, g, &k, onmf::onmf_constants_v(), &pair).expect("shapes"));

        let mp = McProblem::new(random_obs(rng, 5, 4), 2, 0.1, 5.0).expect("valid problem");
        let mut pack = || McState { u: signed(rng, 5, 2), v: signed(rng, 2, 4) }.pack();
        let pair = [(pack(), pack())];
        let f = |x: &Matrix| matcomp::smooth_and_grad(&mp, x).0;
        let g = |x: &Matrix| matcomp::smooth_and_grad(&mp, x).1;
        let c = RelSmoothConstants::new(1.0, 1.0).expect("positive");
        rm = rm.merge(check_relative_smoothness(f, g, &matcomp::mc_kernel(&mp), c, &pair).expect("shapes"));
    }
    let worst = [ru.worst(), rv.worst(), rm.worst()];
    (
        worst.iter().all(|&w| w <= RELSMOOTH_TOL),
        format!(
            "{samples} samples per block: worst violation U {:.2e}, V {:.2e}, MCP {:.2e} (tol {RELSMOOTH_TOL:e})",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn descent(opts: Options) -> (bool, String) {
    let runs = if opts.fault_injection { 20 } else { 5 };
    let mut checked = 0;
    for k in 0..runs {
        let seed = opts.seed.wrapping_add(k);
        let synth = data::gen_synthetic_onmf(12, 15, 3, 0.05, seed).expect("valid sizes");
        let init = onmf::spa_init(&synth.x, 3).expect("rank fits");
        let mut p = OnmfProblem::new(synth.x, 3, 100.0).expect("valid problem");
        if opts.fault_injection {
            p.u_constant_scale = 0.5;
        }
        let config = SolverConfig::new(2).with_max_iters(200).with_tol(0.0).with_verify(true);
        match run(&p, init.into_blocks(), &config) {
            Ok(out) => checked += out.trace.len(),
            Err(Error::DescentViolation { iter, slack, tolerance }) => {
                return (
                    false,
                    format!("descent violated on seed {seed} at iteration {iter}: slack {slack:.3e} < -{tolerance:.1e}"),
                )
            }
            Err(e) => return (false, format!("seed {seed}: {e}")),
        }
    }
    if !opts.fault_injection {
        let ratings = data::gen_low_rank_ratings(30, 25, 2, 0.5, opts.seed).expect("valid sizes");
        let p = McProblem::new(ratings.clone(), 2, 0.1, 5.0).expect("valid problem");
        let init = data::mc_random_init(&ratings, 2, opts.seed).expect("nonempty");
        let config = BacktrackConfig { verify_descent: true, max_iters: 200, tol_rel_change: 0.0, ..Default::default() };
        match run_backtracking(&p, init.pack(), &config) {
            Ok(out) => checked += out.trace.len(),
            Err(e) => return (false, format!("matrix completion: {e}")),
        }
    }
    (true, format!("{checked} verified iterations without a descent violation"))
}

const ORACLE_TOL: f64 = 1e-6;
const STATIONARITY: f64 = 1e-10;

fn oracles(rng: &mut Rng, samples: usize) -> (bool, String) {
    let (m, n, r) = (5, 4, 2);
    let mut worst = [0.0f64; 3];
    for _ in 0..samples {
        let x = nonneg(rng, m, n);
        let lambda = 0.1 + 5.0 * rng.random::<f64>();
        let p = OnmfProblem::new(x.clone(), r, lambda).expect("valid problem");
        let (u_bar, v) = (nonneg(rng, m, r), nonneg(rng, r, n));
        let l1 = oracle::largest_eigenvalue(&v.dot(&v.t()));
        let reference = oracle::onmf_u_subproblem(&x, &u_bar, &v, lambda, l1, STATIONARITY);
        worst[0] = worst[0].max(matrix::norm(&(&onmf::update_u(&p, &u_bar, &v, l1) - &reference.solution)));

        let (u, v_bar) = (nonneg(rng, m, r), nonneg(rng, r, n));
        let reference = oracle::onmf_v_subproblem(&x, &u, &v_bar, lambda, 1.0, STATIONARITY);
        worst[1] = worst[1].max(matrix::norm(&(&onmf::update_v(&p, &u, &v_bar, 1.0) - &reference.solution)));

        let obs = random_obs(rng, m, n);
        let mp = McProblem::new(obs.clone(), r, 0.1, 5.0).expect("valid problem");
        let state = McState { u: signed(rng, m, r), v: signed(rng, r, n) };
        let x_bar = McState { u: signed(rng, m, r), v: signed(rng, r, n) };
        let upper = 10f64.powf(-2.0 + 3.0 * rng.random::<f64>());
        let ours = matcomp::mc_subproblem(&mp, &state, &x_bar, upper);
        let input = oracle::McSubproblemInput {
            obs: obs.entries(),
            u_k: &state.u,
            v_k: &state.v,
            u_bar: &x_bar.u,
            v_bar: &x_bar.v,
            lambda: 0.1,
            theta: 5.0,
            c1: 3.0,
            c2: obs.norm(),
            upper,
        };
        let (ou, ov, _) = oracle::mc_subproblem(&input, STATIONARITY);
        worst[2] = worst[2].max((matrix::norm_sq(&(&ours.u - &ou)) + matrix::norm_sq(&(&ours.v - &ov))).sqrt());
    }
    (
        worst.iter().all(|&w| w <= ORACLE_TOL),
        format!(
            "{samples} instances: max gap to iterative solver U {:.2e}, V {:.2e}, MCP {:.2e} (tol {ORACLE_TOL:e})",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn cubic(rng: &mut Rng, samples: usize) -> (bool, String) {
    let (mut worst_rho, mut worst_tau) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let a = 10f64.powf(-3.0 + 4.0 * rng.random::<f64>());
        let c = 10f64.powf(-6.0 + 10.0 * rng.random::<f64>());
        match onmf::cubic_rho(a, c) {
            Ok(rho) => worst_rho = worst_rho.max((rho * rho * (rho - a) - c).abs() / (1.0 + c)),
            Err(e) => return (false, format!("cubic_rho({a}, {c}): {e}")),
        }
        let c1 = 10f64.powf(-1.0 + 2.0 * rng.random::<f64>());
        let c2 = 10f64.powf(-2.0 + 4.0 * rng.random::<f64>());
        let s = 10f64.powf(-6.0 + 12.0 * rng.random::<f64>());
        let tau = matcomp::tau_star(c1, c2, s);
        worst_tau = worst_tau.max((c1 * s * tau.powi(3) + c2 * tau - 1.0).abs());
    }
    (
        worst_rho <= 1e-8 && worst_tau <= 1e-10,
        format!("{samples} draws: max rho residual {worst_rho:.2e} (tol 1e-8), max tau residual {worst_tau:.2e} (tol 1e-10)"),
    )
}

fn accuracy(rng: &mut Rng, samples: usize) -> (bool, String) {
    let mut mismatches = 0;
    for _ in 0..samples {
        let r = rng.random_range(1..=6);
        let n = rng.random_range(1..=60);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..r)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..r)).collect();
        let fast = onmf::clustering_accuracy(&truth, &pred, r).expect("labels below r");
        if fast != oracle::brute_force_accuracy(&truth, &pred, r) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches}/{samples} disagreements with exhaustive search"))
}
