use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bandwidth h = {0} (must be finite and > 0)")]
    InvalidBandwidth(f64),

    #[error("invalid configuration: `{field}` {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("simulation blew up at step {step} of path seed {seed:#018x}: value {value}")]
    SimulationBlowup { step: usize, seed: u64, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("argument {0} outside the domain (0, 1) of the inverse warp")]
    Domain(f64),

    #[error("operation requires an analytic warp with density and inverse")]
    UnsupportedWarp,

    #[error("incompatible evaluation grids: {0}")]
    IncompatibleGrid(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h))
    }
}
