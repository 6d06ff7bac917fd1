use thiserror::Error;

/// Errors produced by the simulation, training and validation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite state encountered: {0}")]
    CorruptState(String),

    #[error("integration blew up at step {step} (t = {time:.4}): {detail}")]
    BlowUp {
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate feature column {column}: standard deviation is zero")]
    DegenerateFeature { column: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
