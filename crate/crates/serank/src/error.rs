use thiserror::Error;

/// Errors raised by the ranking toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected shape) do not line up.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A query-level operation was asked to run with no documents selected.
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    /// A dataset line could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Data does not match the declared schema (feature count, stats width, ...).
    #[error("schema error: {0}")]
    Schema(String),

    /// A model or run configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Training aborted (non-finite loss, ...).
    #[error("training aborted at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
