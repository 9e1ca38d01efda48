use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autograd(#[from] irsbf_autograd::Error),
    #[error(transparent)]
    Core(#[from] irsbf_core::Error),
    #[error("expected {expected} history slots, got {got}")]
    History { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("beamformer output is the zero matrix and cannot be normalized")]
    ZeroBeam,
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
