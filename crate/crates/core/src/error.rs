use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the precoding library.
#[derive(Debug, Error)]
pub enum PrecodingError {
    /// Dimensions or parameters that violate a configuration invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed numeric input (non-finite entries, negative weights, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A factorization or decomposition failed even after jitter.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A numerical failure inside an iterative solver.
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<PrecodingError>,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl PrecodingError {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            already @ PrecodingError::AtIteration { .. } => already,
            other => PrecodingError::AtIteration {
                iteration,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PrecodingError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PrecodingError>;
