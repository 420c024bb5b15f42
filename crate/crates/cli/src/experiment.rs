//! Loads or generates data, runs one configured solver, and assembles the
//! report.

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use bmme_core::backtracking::{run_backtracking, BacktrackConfig};
use bmme_core::data;
use bmme_core::matcomp::{self, McProblem, McState, ObservedMatrix};
use bmme_core::onmf::{self, OnmfProblem, OnmfState};
use bmme_core::solver::{run, SolverConfig};
use bmme_core::trace::Trace;
use bmme_core::Matrix;
use serde::Serialize;

use crate::config::{Algorithm, DataFormat, ExperimentConfig, InitKind, Problem};

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub trace_file: String,
    pub iterations: usize,
    pub stop_reason: String,
    pub final_objective: f64,
    /// `final_objective / objective_scale`.
    pub scaled_objective: f64,
    /// `‖X‖²_F` for ONMF, `‖P(A)‖²_F` over the training set for matcomp.
    pub objective_scale: f64,
    pub lambda: f64,
    pub accuracy: Option<f64>,
    pub init_test_rmse: Option<f64>,
    pub train_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub wall_time_seconds: f64,
}

pub struct RunResult {
    pub report: RunReport,
    pub trace: Trace,
    /// Sidecar mapping dense indices to ratings ids, when ratings were loaded.
    pub id_map: Option<String>,
}

fn solver_config(cfg: &ExperimentConfig, blocks: usize) -> SolverConfig {
    SolverConfig::new(blocks)
        .with_delta(cfg.delta)
        .with_eta(cfg.eta)
        .with_max_iters(cfg.max_iters)
        .with_tol(cfg.tol)
        .with_time_budget(cfg.time_budget.map(Duration::from_secs_f64))
        .with_verify(cfg.verify)
        .with_extrapolation(cfg.algorithm != Algorithm::Bmm)
}

/// Parse errors already carry the path; I/O errors do not.
fn from_file<T>(path: &Path, r: bmme_core::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        bmme_core::Error::Io(io) => anyhow::anyhow!("{}: {io}", path.display()),
        e => e.into(),
    })
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim()
                .parse()
                .with_context(|| format!("{}:{}: bad label `{}`", path.display(), k + 1, l.trim()))
        })
        .collect()
}

fn load_init(cfg: &ExperimentConfig) -> Result<(Matrix, Matrix)> {
    let (Some(u), Some(v)) = (&cfg.init_u, &cfg.init_v) else {
        bail!("file initialization needs --init-u and --init-v");
    };
    Ok((from_file(u, data::load_dense_csv(u))?, from_file(v, data::load_dense_csv(v))?))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    match cfg.problem {
        Problem::Onmf => run_onmf(cfg),
        Problem::Matcomp => run_matcomp(cfg),
    }
}

fn run_onmf(cfg: &ExperimentConfig) -> Result<RunResult> {
    let (x, labels) = match &cfg.data {
        None => {
            let s = data::gen_synthetic_onmf(cfg.m, cfg.n, cfg.r, cfg.noise, cfg.seed)?;
            (s.x, Some(s.labels))
        }
        Some(path) => {
            let x = match cfg.data_format.unwrap_or(DataFormat::Csv) {
                DataFormat::Csv => from_file(path, data::load_dense_csv(path))?,
                DataFormat::Mm => from_file(path, data::load_matrix_market(path))?.to_dense(),
                DataFormat::Ratings => bail!("ratings files are for matcomp"),
            };
            let labels = cfg.labels.as_deref().map(load_labels).transpose()?;
            (x, labels)
        }
    };
    let init = match cfg.init {
        InitKind::File => {
            let (u, v) = load_init(cfg)?;
            OnmfState { u, v }
        }
        _ => onmf::spa_init(&x, cfg.r)?,
    };
    let lambda = cfg.lambda.unwrap_or_else(|| onmf::default_lambda(&x, &init));
    let problem = OnmfProblem::new(x, cfg.r, lambda)?;
    let scale = problem.data_norm_sq();

    let start = Instant::now();
    let out = run(&problem, init.into_blocks(), &solver_config(cfg, 2))?;
    let wall = start.elapsed().as_secs_f64();
    let state = OnmfState::from_blocks(out.final_blocks);
    let accuracy = match labels {
        Some(truth) => {
            if truth.len() != state.v.ncols() {
                bail!("label file has {} entries for {} columns", truth.len(), state.v.ncols());
            }
            let r = cfg.r.max(truth.iter().max().map_or(0, |m| m + 1));
            Some(onmf::clustering_accuracy(&truth, &onmf::predict_clusters(&state.v), r)?)
        }
        None => None,
    };
    let report = RunReport {
        config: cfg.clone(),
        trace_file: "trace.csv".into(),
        iterations: out.trace.len(),
        stop_reason: out.stop_reason.as_str().into(),
        final_objective: out.final_objective,
        scaled_objective: out.final_objective / scale,
        objective_scale: scale,
        lambda,
        accuracy,
        init_test_rmse: None,
        train_rmse: None,
        test_rmse: None,
        wall_time_seconds: wall,
    };
    Ok(RunResult { report, trace: out.trace, id_map: None })
}

fn load_observations(cfg: &ExperimentConfig, path: &Path) -> Result<(ObservedMatrix, Option<String>)> {
    Ok(match cfg.data_format.unwrap_or(DataFormat::Ratings) {
        DataFormat::Ratings => {
            let r = from_file(path, data::load_ratings(path))?;
            let map = r.id_map_string();
            (r.matrix, Some(map))
        }
        DataFormat::Mm => (from_file(path, data::load_matrix_market(path))?, None),
        DataFormat::Csv => {
            let dense = from_file(path, data::load_dense_csv(path))?;
            let entries = dense.indexed_iter().map(|((i, j), &v)| (i, j, v)).collect();
            (ObservedMatrix::new(dense.nrows(), dense.ncols(), entries)?, None)
        }
    })
}

fn run_matcomp(cfg: &ExperimentConfig) -> Result<RunResult> {
    let (all, id_map) = match &cfg.data {
        None => (data::gen_low_rank_ratings(cfg.m, cfg.n, cfg.r, cfg.observed_fraction, cfg.seed)?, None),
        Some(path) => load_observations(cfg, path)?,
    };
    let (train, test) = data::train_test_split(&all, cfg.train_fraction, cfg.seed.wrapping_add(1))?;
    let lambda = cfg.lambda.unwrap_or(matcomp::DEFAULT_LAMBDA);
    let problem = McProblem::new(train.clone(), cfg.r, lambda, cfg.theta)?;
    let init = match cfg.init {
        InitKind::File => {
            let (u, v) = load_init(cfg)?;
            if u.dim() != (train.rows(), cfg.r) || v.dim() != (cfg.r, train.cols()) {
                bail!("initial factors have shapes {:?} and {:?}", u.dim(), v.dim());
            }
            McState { u, v }
        }
        _ => data::mc_random_init(&train, cfg.r, cfg.seed.wrapping_add(2))?,
    };
    let rmse_of = |obs: &ObservedMatrix, s: &McState| (!obs.is_empty()).then(|| matcomp::rmse(obs, s)).transpose();
    let init_test_rmse = rmse_of(&test, &init)?;

    let start = Instant::now();
    let (final_packed, trace, stop, objective) = match cfg.algorithm {
        Algorithm::BmmeBt => {
            let bt = BacktrackConfig {
                delta: cfg.delta,
                eta: cfg.eta,
                max_iters: cfg.max_iters,
                time_budget: cfg.time_budget.map(Duration::from_secs_f64),
                tol_rel_change: cfg.tol,
                verify_descent: cfg.verify,
                ..Default::default()
            };
            let out = run_backtracking(&problem, init.pack(), &bt)?;
            (out.final_point, out.trace, out.stop_reason, out.final_objective)
        }
        Algorithm::Bmm | Algorithm::Bmme => {
            let out = run(&problem, vec![init.pack()], &solver_config(cfg, 1))?;
            let packed = out.final_blocks.into_iter().next().expect("one block");
            (packed, out.trace, out.stop_reason, out.final_objective)
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let state = problem.unpack(&final_packed);
    let scale = train.norm().powi(2);
    let report = RunReport {
        config: cfg.clone(),
        trace_file: "trace.csv".into(),
        iterations: trace.len(),
        stop_reason: stop.as_str().into(),
        final_objective: objective,
        scaled_objective: objective / scale,
        objective_scale: scale,
        lambda,
        accuracy: None,
        init_test_rmse,
        train_rmse: Some(matcomp::rmse(&train, &state)?),
        test_rmse: rmse_of(&test, &state)?,
        wall_time_seconds: wall,
    };
    Ok(RunResult { report, trace, id_map })
}
