use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// The gradient history holds no entries yet; callers fall back to the
    /// fast-only update.
    #[error("gradient history for layer {layer} is empty")]
    EmptyHistory { layer: usize },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: u64, loss: f64 },

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    Format {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("rate fit failed: non-positive gap {gap} at index {index}")]
    Fit { index: usize, gap: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        LabError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
