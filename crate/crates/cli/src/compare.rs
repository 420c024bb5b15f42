//! Multi-seed comparison of several algorithms on one problem family.

use std::fmt::Write;
use std::path::Path;

use anyhow::Result;
use bmme_core::par::Exec;

use crate::config::{Algorithm, ExperimentConfig, Settings};
use crate::experiment::{run_experiment, RunReport, RunResult};
use crate::output::{write_atomic, write_run};
use crate::plot::{self, Series};
use crate::UsageError;

pub const SUMMARY_HEADER: &str =
    "algorithm,seed,iterations,stop_reason,final_objective,scaled_objective,accuracy,test_rmse,wall_time_seconds,median_final_objective";

/// One resolved configuration per `(algorithm, seed)`, algorithms outermost.
/// Seeds run from the base seed upwards.
pub fn plan(settings: &Settings, algorithms: &[Algorithm], seeds: u64) -> Result<Vec<ExperimentConfig>, UsageError> {
    if algorithms.is_empty() {
        return Err(UsageError("--algorithms: at least one algorithm is required".into()));
    }
    if seeds == 0 {
        return Err(UsageError("--seeds: at least one seed is required".into()));
    }
    let base = ExperimentConfig::resolve(settings.clone())?.seed;
    let mut jobs = Vec::new();
    for &algorithm in algorithms {
        for k in 0..seeds {
            let s = Settings { algorithm: Some(algorithm), seed: Some(base.wrapping_add(k)), ..settings.clone() };
            let mut cfg = ExperimentConfig::resolve(s)?;
            cfg.out = run_dir(&cfg.out, algorithm, cfg.seed);
            jobs.push(cfg);
        }
    }
    Ok(jobs)
}

fn run_dir(out: &Path, algorithm: Algorithm, seed: u64) -> std::path::PathBuf {
    out.join("runs").join(format!("{}_seed{seed}", algorithm.name()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

pub fn summary_csv(reports: &[RunReport], algorithms: &[Algorithm]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for &alg in algorithms {
        let rows: Vec<&RunReport> = reports.iter().filter(|r| r.config.algorithm == alg).collect();
        let med = median(rows.iter().map(|r| r.final_objective).collect());
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:?},{:?},{},{},{:?},{med:?}",
                alg.name(),
                r.config.seed,
                r.iterations,
                r.stop_reason,
                r.final_objective,
                r.scaled_objective,
                opt(r.accuracy),
                opt(r.test_rmse),
                r.wall_time_seconds
            );
        }
    }
    out
}

pub fn plot_svg(results: &[RunResult], algorithms: &[Algorithm]) -> String {
    let series: Vec<Series> = algorithms
        .iter()
        .map(|&alg| Series {
            label: alg.name().to_string(),
            runs: results
                .iter()
                .filter(|r| r.report.config.algorithm == alg)
                .map(|r| {
                    let scale = r.report.objective_scale;
                    r.trace.records.iter().map(|rec| (rec.iter as f64, rec.objective / scale)).collect()
                })
                .collect(),
        })
        .collect();
    let problem = results.first().map_or("", |r| match r.report.config.problem {
        crate::config::Problem::Onmf => "ONMF",
        crate::config::Problem::Matcomp => "matrix completion",
    });
    plot::render(&series, &format!("{problem} convergence"), "scaled objective")
}

/// Runs every job, writes per-run outputs, `summary.csv` and `plot.svg`
/// under `out` and returns the reports.
pub fn compare(jobs: Vec<ExperimentConfig>, algorithms: &[Algorithm], out: &Path, exec: Exec) -> Result<Vec<RunReport>> {
    let results: Vec<RunResult> = exec
        .map(jobs, |cfg| {
            let result = run_experiment(&cfg)?;
            write_run(&cfg.out, &result)?;
            Ok::<_, anyhow::Error>(result)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let reports: Vec<RunReport> = results.iter().map(|r| r.report.clone()).collect();
    write_atomic(&out.join("summary.csv"), summary_csv(&reports, algorithms).as_bytes())?;
    write_atomic(&out.join("plot.svg"), plot_svg(&results, algorithms).as_bytes())?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_lengths() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn plan_orders_algorithms_then_seeds() {
        let s = Settings { seed: Some(10), ..Default::default() };
        let jobs = plan(&s, &[Algorithm::Bmm, Algorithm::Bmme], 2).unwrap();
        let got: Vec<_> = jobs.iter().map(|j| (j.algorithm, j.seed)).collect();
        assert_eq!(
            got,
            vec![(Algorithm::Bmm, 10), (Algorithm::Bmm, 11), (Algorithm::Bmme, 10), (Algorithm::Bmme, 11)]
        );
        assert!(jobs[3].out.ends_with("runs/bmme_seed11"));
        assert!(plan(&s, &[], 1).is_err() && plan(&s, &[Algorithm::Bmm], 0).is_err());
    }
}
