use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation engine, simulator and campaign runner.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its valid range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Every particle received zero posterior mass.
    #[error("degenerate Bayes update: total posterior mass is {mass}")]
    DegenerateUpdate { mass: f64 },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
