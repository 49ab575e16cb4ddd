use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: {0}")]
    Frame(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("alpha {alpha} keeps no triangle")]
    EmptyShape { alpha: f64 },

    #[error("size error: {0}")]
    Size(String),

    #[error("shape mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },

    #[error("step {step} outside [0, {total})")]
    OutOfRange { step: u64, total: u64 },

    #[error("{pool} pool has {available} items, {needed} needed")]
    PoolExhausted {
        pool: &'static str,
        available: usize,
        needed: usize,
    },

    #[error("property `{0}` missing on at least one annotation")]
    Property(String),

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("image file not found: {}", .0.display())]
    MissingImage(PathBuf),

    #[error("image {0} has no annotations")]
    EmptyGroundTruth(u64),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("could not place {placed}/{requested} apples after {attempts} attempts")]
    Packing {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("pgm: {0}")]
    Pgm(String),

    #[error("reading {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Detect(#[from] DetectError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures of a single detection request. Every variant carries the id of
/// the request it belongs to.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DetectError {
    #[error("request {id}: no response within {timeout_ms} ms")]
    ExternalTimeout { id: String, timeout_ms: u64 },

    #[error("request {id}: protocol error: {message}")]
    Protocol { id: String, message: String },

    #[error("request {id}: detector process exited: {message}")]
    ProcessExit { id: String, message: String },
}

impl DetectError {
    pub fn request_id(&self) -> &str {
        match self {
            DetectError::ExternalTimeout { id, .. }
            | DetectError::Protocol { id, .. }
            | DetectError::ProcessExit { id, .. } => id,
        }
    }
}
