use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("no convergence after {} iterations; delta history {history:?}", history.len())]
    Nonconvergence { history: Vec<f64> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("adaptedness violated at step {step}: slice depends on noise step {depends_on}")]
    Adaptedness { step: usize, depends_on: usize },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("ensemble too small: need at least {needed}, got {got}")]
    EnsembleTooSmall { needed: usize, got: usize },

    #[error("window too small: {0}")]
    Window(String),

    #[error("bad noise container: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}
