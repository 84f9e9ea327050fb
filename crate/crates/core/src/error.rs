use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusorError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("unknown mode `{0}` (expected full, single_encoder:<k>, or baseline_no_fusor)")]
    UnknownMode(String),

    #[error("unknown encoder view `{0}` (expected downsample, edge, stat, or blur)")]
    UnknownEncoder(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FusorError> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> FusorError {
    FusorError::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
