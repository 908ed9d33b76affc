use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for {op} (len {len})")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("sequence exceeds {what} limit: {len} > {max}")]
    Truncation { what: &'static str, len: usize, max: usize },
    #[error("environment generation failed: {0}")]
    Generation(String),
    #[error("node {b} unreachable from {a}")]
    Unreachable { a: usize, b: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged in {stage} at step {step}: loss is {loss}")]
    Diverged { stage: String, step: usize, loss: f64 },
    #[error("hash mismatch: {what} expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
