use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum RcaError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("generation error: {0}")]
    Generation(String),

    /// No causal rule fired for the symptom window.
    #[error("undiagnosable: no candidate root cause is supported by the data")]
    Undiagnosable,

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("tokenization error: out-of-vocabulary token(s) {0:?}")]
    Tokenization(Vec<String>),

    #[error("transport error for instance {instance_id}: {message}")]
    Transport { instance_id: String, message: String },

    #[error("numerical guard: {0}")]
    NumericalGuard(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = RcaError> = std::result::Result<T, E>;
