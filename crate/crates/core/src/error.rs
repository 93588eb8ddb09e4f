use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid link index {index} (model has {n_links} links)")]
    InvalidLinkIndex { index: usize, n_links: usize },

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate contact normal between {0}: witness points coincide")]
    DegenerateNormal(String),

    #[error("quadratic program infeasible (active rows: {active:?})")]
    Infeasible { active: Vec<usize> },

    #[error("quadratic program hit the iteration cap ({iterations})")]
    MaxIter { iterations: usize },

    #[error("non-finite state at t = {t:.6} s: {detail}")]
    NonFinite { t: f64, detail: String },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
