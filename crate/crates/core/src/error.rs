use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("CFL violation: dt = {dt} exceeds bound {bound}")]
    Cfl { dt: f64, bound: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed metadata in {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidField(_) => "invalid-field",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Cfl { .. } => "cfl",
            Error::NoConvergence { .. } => "no-convergence",
            Error::Checksum { .. } => "checksum",
            Error::Metadata { .. } => "metadata",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidField(format!(
            "{name}: non-finite entry at flat index {i}"
        ))),
    }
}
