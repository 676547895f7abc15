use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("framing error: {0}")]
    Framing(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("aliasing guard: signal occupies {occupancy:.1}% of the Nyquist band (limit 80%)")]
    Aliasing { occupancy: f64 },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("missing prerequisite `{stage}`: {path} not found")]
    MissingPrerequisite { stage: String, path: PathBuf },

    #[error("output already exists: {0} (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("container format error: {0}")]
    Format(String),

    #[error("digest mismatch: {0}")]
    DigestMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
