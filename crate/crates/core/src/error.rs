use thiserror::Error;

/// Errors raised by the measures, optimizers and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid alpha {0}: order must be a finite positive number")]
    InvalidAlpha(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("backward pass called with a trace from a different parameter version")]
    StaleTrace,

    #[error("training diverged at iteration {iteration} ({phase}): loss = {loss}")]
    Diverged {
        iteration: usize,
        phase: &'static str,
        loss: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
