//! Command-line flags, the optional JSON config file, and their merge into
//! a validated [`ExperimentConfig`]. Flags override file values, which
//! override defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Onmf,
    Matcomp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bmm,
    Bmme,
    #[value(name = "bmme_bt")]
    BmmeBt,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bmm => "bmm",
            Algorithm::Bmme => "bmme",
            Algorithm::BmmeBt => "bmme_bt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Mm,
    Ratings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Successive projection (ONMF only).
    Spa,
    /// Scaled uniform factors (matrix completion only).
    Random,
    /// Factors read from `--init-u` and `--init-v`.
    File,
}

/// Every experiment setting, optional so that a flag can fall back to the
/// config file and then to the defaults.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// JSON file with any of these settings; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub problem: Option<Problem>,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Relative noise level of synthetic ONMF data.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Observed fraction of synthetic ratings.
    #[arg(long)]
    pub observed_fraction: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub data_format: Option<DataFormat>,
    /// Ground-truth cluster ids for file data, one per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    #[arg(long)]
    pub init_u: Option<PathBuf>,
    #[arg(long)]
    pub init_v: Option<PathBuf>,
    /// Check the descent inequality at every iteration.
    #[arg(long)]
    #[serde(default)]
    pub verify: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($target:ident, $other:ident; $($field:ident),*) => {
        $( if $target.$field.is_none() { $target.$field = $other.$field; } )*
    };
}

impl Settings {
    /// Fills unset fields from `other`.
    pub fn or(mut self, other: Settings) -> Settings {
        overlay!(self, other; problem, algorithm, m, n, r, noise, observed_fraction, train_fraction,
            lambda, theta, delta, eta, max_iters, time_budget, tol, seed, data, data_format, labels,
            init, init_u, init_v, verify, out);
        self
    }

    pub fn with_file(self) -> Result<Settings, UsageError> {
        match &self.config {
            None => Ok(self),
            Some(path) => {
                let file = load_settings_file(path)?;
                Ok(self.or(file))
            }
        }
    }
}

pub fn load_settings_file(path: &Path) -> Result<Settings, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("invalid config file {}: {e}", path.display())))
}

/// A fully resolved experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub algorithm: Algorithm,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub noise: f64,
    pub observed_fraction: f64,
    pub train_fraction: f64,
    /// `None` selects the data-driven default for file-based ONMF.
    pub lambda: Option<f64>,
    pub theta: f64,
    pub delta: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub time_budget: Option<f64>,
    pub tol: f64,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub data_format: Option<DataFormat>,
    pub labels: Option<PathBuf>,
    pub init: InitKind,
    pub init_u: Option<PathBuf>,
    pub init_v: Option<PathBuf>,
    pub verify: bool,
    pub out: PathBuf,
}

fn check(ok: bool, field: &str, msg: impl std::fmt::Display) -> Result<(), UsageError> {
    if ok {
        Ok(())
    } else {
        Err(UsageError(format!("--{field}: {msg}")))
    }
}

impl ExperimentConfig {
    pub fn resolve(s: Settings) -> Result<Self, UsageError> {
        let problem = s.problem.unwrap_or(Problem::Onmf);
        let (dm, dn, dr) = match problem {
            Problem::Onmf => (100, 100, 5),
            Problem::Matcomp => (200, 200, 3),
        };
        let algorithm = s.algorithm.unwrap_or(match problem {
            Problem::Onmf => Algorithm::Bmme,
            Problem::Matcomp => Algorithm::BmmeBt,
        });
        let init = s.init.unwrap_or(match problem {
            Problem::Onmf => InitKind::Spa,
            Problem::Matcomp => InitKind::Random,
        });
        let lambda = s.lambda.or(match (problem, &s.data) {
            (Problem::Onmf, None) => Some(1000.0),
            (Problem::Onmf, Some(_)) => None,
            (Problem::Matcomp, _) => Some(bmme_core::matcomp::DEFAULT_LAMBDA),
        });
        let cfg = Self {
            problem,
            algorithm,
            m: s.m.unwrap_or(dm),
            n: s.n.unwrap_or(dn),
            r: s.r.unwrap_or(dr),
            noise: s.noise.unwrap_or(0.05),
            observed_fraction: s.observed_fraction.unwrap_or(0.3),
            train_fraction: s.train_fraction.unwrap_or(0.7),
            lambda,
            theta: s.theta.unwrap_or(bmme_core::matcomp::DEFAULT_THETA),
            delta: s.delta.unwrap_or(bmme_core::solver::DEFAULT_DELTA),
            eta: s.eta.unwrap_or(bmme_core::solver::DEFAULT_ETA),
            max_iters: s.max_iters.unwrap_or(500),
            time_budget: s.time_budget,
            tol: s.tol.unwrap_or(bmme_core::solver::DEFAULT_TOL),
            seed: s.seed.unwrap_or(1),
            data_format: s.data_format.or(s.data.as_ref().map(|p| guess_format(p))),
            data: s.data,
            labels: s.labels,
            init,
            init_u: s.init_u,
            init_v: s.init_v,
            verify: s.verify.unwrap_or(false),
            out: s.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), UsageError> {
        check(self.m > 0 && self.n > 0, "m", "dimensions must be positive")?;
        check(self.r > 0, "r", "rank must be positive")?;
        check(self.noise >= 0.0 && self.noise.is_finite(), "noise", "must be nonnegative")?;
        check(
            self.observed_fraction > 0.0 && self.observed_fraction <= 1.0,
            "observed-fraction",
            "must lie in (0, 1]",
        )?;
        check(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "train-fraction",
            "must lie in (0, 1)",
        )?;
        if let Some(l) = self.lambda {
            check(l > 0.0 && l.is_finite(), "lambda", "must be positive")?;
        }
        check(self.theta > 0.0 && self.theta.is_finite(), "theta", "must be positive")?;
        check(self.delta > 0.0 && self.delta < 1.0, "delta", "must lie in (0, 1)")?;
        check(self.eta > 0.0 && self.eta < 1.0, "eta", "must lie in (0, 1)")?;
        check(self.tol >= 0.0, "tol", "must be nonnegative")?;
        if let Some(t) = self.time_budget {
            check(t > 0.0 && t.is_finite(), "time-budget", "must be a positive number of seconds")?;
        }
        check(
            !(self.problem == Problem::Onmf && self.algorithm == Algorithm::BmmeBt),
            "algorithm",
            "bmme_bt needs a single-block problem; use it with --problem matcomp",
        )?;
        match (self.problem, self.init) {
            (Problem::Onmf, InitKind::Random) => {
                return Err(UsageError("--init: random is only available for matcomp".into()))
            }
            (Problem::Matcomp, InitKind::Spa) => {
                return Err(UsageError("--init: spa is only available for onmf".into()))
            }
            (_, InitKind::File) => check(
                self.init_u.is_some() && self.init_v.is_some(),
                "init",
                "file initialization needs --init-u and --init-v",
            )?,
            _ => {}
        }
        if self.problem == Problem::Onmf {
            check(self.data_format != Some(DataFormat::Ratings), "data-format", "ratings files are for matcomp")?;
        }
        Ok(())
    }
}

fn guess_format(path: &Path) -> DataFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("mtx") | Some("mm") => DataFormat::Mm,
        Some("csv") => DataFormat::Csv,
        _ => DataFormat::Ratings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let flags = Settings { m: Some(7), ..Default::default() };
        let file: Settings = serde_json::from_str(r#"{"m": 3, "n": 4, "algorithm": "bmm"}"#).unwrap();
        let cfg = ExperimentConfig::resolve(flags.or(file)).unwrap();
        assert_eq!((cfg.m, cfg.n, cfg.algorithm), (7, 4, Algorithm::Bmm));
    }

    #[test]
    fn unknown_file_fields_are_rejected() {
        assert!(serde_json::from_str::<Settings>(r#"{"lamda": 1.0}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let err = ExperimentConfig::resolve(Settings { delta: Some(1.5), ..Default::default() }).unwrap_err();
        assert!(err.0.contains("--delta"));
        let bt = Settings { algorithm: Some(Algorithm::BmmeBt), ..Default::default() };
        assert!(ExperimentConfig::resolve(bt).unwrap_err().0.contains("--algorithm"));
    }

    #[test]
    fn problem_specific_defaults() {
        let cfg = ExperimentConfig::resolve(Settings { problem: Some(Problem::Matcomp), ..Default::default() })
            .unwrap();
        assert_eq!((cfg.m, cfg.r, cfg.algorithm, cfg.init), (200, 3, Algorithm::BmmeBt, InitKind::Random));
        assert_eq!(cfg.lambda, Some(0.1));
    }
}
