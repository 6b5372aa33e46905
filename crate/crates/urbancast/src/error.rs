//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown region id {0}")]
    UnknownRegion(u64),

    #[error("duplicate region id {0}")]
    DuplicateId(u64),

    #[error("embedding payload size mismatch: expected {expected} bytes, got {got}")]
    PayloadSize { expected: usize, got: usize },

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cached entropy for region {id} is stale: stored {cached}, recomputed {computed}")]
    StaleEntropy { id: u64, cached: f64, computed: f64 },

    #[error("language model transport failure: {0}")]
    LlmTransport(String),

    #[error("language model returned status {status}: {body}")]
    LlmStatus { status: u16, body: String },

    #[error("language model returned an empty response")]
    LlmEmptyResponse,

    #[error("no canned response matches the prompt")]
    LlmNoMatch,

    #[error("zero vector where a direction is required")]
    ZeroVector,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether a failed language-model call is worth retrying.
    pub fn retryable(&self) -> bool {
        match self {
            Error::LlmTransport(_) | Error::LlmEmptyResponse => true,
            Error::LlmStatus { status, .. } => *status >= 500,
            _ => false,
        }
    }
}
