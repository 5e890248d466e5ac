use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("invalid averaging period {0}; must be at least 1")]
    InvalidPeriod(u64),

    #[error("invalid problem size: {0}")]
    InvalidProblem(String),

    #[error("reference solver stopped after {iters} iterations with gradient norm {grad_norm:e}")]
    NotConverged {
        iters: usize,
        grad_norm: f64,
        best: Vec<f64>,
    },

    #[error("non-finite parameters at iteration {iter}")]
    Diverged { iter: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step-size precondition violated: gamma = {gamma:e} exceeds {limit:e}")]
    StepSizePrecondition { gamma: f64, limit: f64 },

    #[error("transient stage is unbounded (beta = 1 for the gossip family)")]
    InfiniteTransient,

    #[error("logging grids do not match: {0}")]
    GridMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
