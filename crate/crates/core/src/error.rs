use std::path::PathBuf;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    DimensionMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error in {path}: {what} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("parse error at row {row}, column {col}: {what}")]
    Parse { row: usize, col: usize, what: String },

    #[error("cannot stratify: class {class} has only {count} example(s)")]
    Stratify { class: usize, count: usize },

    #[error("loss became non-finite at step {step}; last finite loss was {last_loss}")]
    NonFiniteLoss { step: usize, last_loss: f64 },

    #[error("all learning rates diverged: {0}")]
    AllRunsDiverged(String),

    #[error("cost-model fit error: {0}")]
    Fit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
