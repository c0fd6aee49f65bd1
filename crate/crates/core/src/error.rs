use thiserror::Error;

/// Errors raised across the watermarking toolkit.
#[derive(Debug, Error)]
pub enum MixerError {
    #[error("input shape mismatch: expected {expected:?}, got {actual:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("non-finite value in layer {layer} ({stage})")]
    Numeric { layer: usize, stage: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<MixerError>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MixerError>;
