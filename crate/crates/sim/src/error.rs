use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] irsbf_core::Error),
    #[error(transparent)]
    Nets(#[from] irsbf_nets::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown preset `{0}` (expected beta, power, users, velocity or tau)")]
    UnknownPreset(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("checkpoint does not fit the scenario: {0}")]
    Structural(String),
    #[error("no results to report")]
    EmptyResults,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlParse(#[from] toml::de::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
