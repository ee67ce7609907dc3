use thiserror::Error;

/// Errors surfaced by the library. Each variant maps onto one failure class
/// that callers (and the CLI exit-code table) distinguish.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("zero gradient: l1 normalization of an all-zero tensor")]
    ZeroGradient,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged for model slot {slot} (non-finite loss at epoch {epoch})")]
    TrainingDiverged { slot: usize, epoch: usize },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("optimizer failed after {iterations} iterations (gradient norm {grad_norm:e})")]
    OptimizerFailed { iterations: usize, grad_norm: f64 },

    #[error("trial {trial} at T={t}: {source}")]
    Trial {
        t: usize,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported zoo format version {0}")]
    Version(u64),

    #[error("truncated or malformed file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
