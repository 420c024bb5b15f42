//! `bmme`: run, compare and verify the block Bregman solvers.
//!
//! Exit status is 0 on success, 1 on a runtime failure (including a failed
//! verification suite) and 2 on a usage error.

mod compare;
mod config;
mod experiment;
mod output;
mod plot;
mod verify;

use std::process::ExitCode;

use bmme_core::par::Exec;
use clap::{Args, Parser, Subcommand};

use config::{Algorithm, ExperimentConfig, Settings};

/// Invalid flags or configuration; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "bmme", version, about = "Block Bregman majorization-minimization with extrapolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv and report.json.
    Run(Settings),
    /// Run several algorithms over several seeds and summarize them.
    Compare(CompareArgs),
    /// Run built-in self-checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    settings: Settings,
    /// Comma-separated algorithms to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bmm,bmme")]
    algorithms: Vec<Algorithm>,
    /// Number of seeds per algorithm, counting up from --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Run the jobs on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: verify::Suite,
    /// Random instances per suite.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Halve the U-block smoothness constant; the descent suite must then fail.
    #[arg(long)]
    fault_injection: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run(settings) => {
            let cfg = ExperimentConfig::resolve(settings.with_file()?)?;
            let result = experiment::run_experiment(&cfg)?;
            output::write_run(&cfg.out, &result)?;
            let r = &result.report;
            println!(
                "{} {}: {} iterations ({}), objective {:.6e}, scaled {:.6e}",
                problem_name(&cfg),
                cfg.algorithm.name(),
                r.iterations,
                r.stop_reason,
                r.final_objective,
                r.scaled_objective
            );
            if let Some(a) = r.accuracy {
                println!("accuracy {a:.4}");
            }
            if let (Some(init), Some(test)) = (r.init_test_rmse, r.test_rmse) {
                println!("test RMSE {init:.4} -> {test:.4}");
            }
            println!("wrote {}", cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(args) => {
            let settings = args.settings.with_file()?;
            let out = ExperimentConfig::resolve(settings.clone())?.out;
            let jobs = compare::plan(&settings, &args.algorithms, args.seeds)?;
            let exec = if args.sequential { Exec::Sequential } else { Exec::Parallel };
            let reports = compare::compare(jobs, &args.algorithms, &out, exec)?;
            for alg in &args.algorithms {
                let finals: Vec<f64> =
                    reports.iter().filter(|r| r.config.algorithm == *alg).map(|r| r.scaled_objective).collect();
                let best = finals.iter().copied().fold(f64::INFINITY, f64::min);
                println!("{}: {} runs, best scaled objective {best:.6e}", alg.name(), finals.len());
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => {
            let opts = verify::Options { samples: args.samples, seed: args.seed, fault_injection: args.fault_injection };
            let outcomes = verify::run_suites(args.suite, opts);
            for o in &outcomes {
                println!("{}: {} | {}", o.suite, if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            Ok(if outcomes.iter().all(|o| o.pass) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn problem_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.problem {
        config::Problem::Onmf => "onmf",
        config::Problem::Matcomp => "matcomp",
    }
}
