//! Scenario runs, baseline comparisons, (α, ε) sweeps and their output files.

pub mod metrics;
pub mod output;
pub mod runner;

pub use runner::{
    configure, run, run_sweep, summarize, RunOutcome, RunRequest, RunSummary, SweepPoint,
    SweepResult,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] issf_wbc::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
