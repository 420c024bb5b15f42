use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(
        "descent inequality violated at iteration {iter}: slack {slack:.3e} below tolerance -{tolerance:.3e}"
    )]
    DescentViolation { iter: usize, slack: f64, tolerance: f64 },

    #[error("subproblem for block {block} returned an infeasible point at iteration {iter}")]
    Infeasible { block: usize, iter: usize },

    #[error("backtracking on the smoothness constant exceeded {doublings} doublings")]
    BacktrackingExhausted { doublings: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
