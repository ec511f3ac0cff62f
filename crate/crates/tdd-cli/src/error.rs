use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config key `{key}`: {reason}")]
    ConfigInvalid { key: String, reason: String },
    #[error("PDC check failed: min eigenvalue {min_eig:e} at omega = {omega}, eta = {eta}")]
    PdcFailed { min_eig: f64, omega: f64, eta: f64 },
    #[error("no CSV artifacts in {}", .0.display())]
    NoArtifacts(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] tdd_core::Error),
}

impl CliError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::ConfigInvalid { key: key.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for a bad config, 3 for a failed validation,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } => 2,
            CliError::PdcFailed { .. } => 3,
            _ => 1,
        }
    }
}
