use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator/training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration at `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("simulation diverged at step {step}: {detail}")]
    SimDiverged { step: u64, detail: String },

    #[error("torque {value} on joint {joint} exceeds the limit of {limit} N·m")]
    TorqueOutOfRange {
        joint: usize,
        value: f64,
        limit: f64,
    },

    #[error("invalid action: {0}")]
    ActionInvalid(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("terrain extent {extent_x} m x {extent_y} m cannot hold a single {cell} m cell")]
    TerrainTooSmall {
        extent_x: f64,
        extent_y: f64,
        cell: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value during update: {0}")]
    NonFinite(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
