use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero channel for user {0}")]
    ZeroChannel(usize),
    #[error("beamformer exceeds power budget: {power} > {budget}")]
    PowerBudget { power: f64, budget: f64 },
    #[error("infeasible frame: overhead fraction {0} >= 1")]
    InfeasibleFrame(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
