use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid weight function: {0}")]
    Kernel(String),

    #[error("invalid tuning configuration: {0}")]
    Tuning(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("simulation diverged at step {step}: {what} = {value:e}")]
    Diverged {
        step: usize,
        what: &'static str,
        value: f64,
    },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("model not identified: {0}")]
    NotIdentified(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
