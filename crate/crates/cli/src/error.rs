use std::io;
use std::path::{Path, PathBuf};

use emsim_core::InstanceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("internal invariant breach: {0}")]
    InvariantBreach(String),
    #[error(
        "baseline was run with seed {baseline} but the alternative with seed {alternative}; \
         paired comparison needs common random numbers, rerun with the same --seed"
    )]
    SeedMismatch { baseline: u64, alternative: u64 },
    #[error(
        "baseline has {baseline} replications but the alternative has {alternative}; \
         rerun both with the same --replications"
    )]
    ReplicationCountMismatch { baseline: u32, alternative: u32 },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 2 validation failure, 3 schema error, 4 invariant breach,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ValidationFailed(_) => 2,
            CliError::Schema(_) | CliError::SeedMismatch { .. } | CliError::ReplicationCountMismatch { .. } => 3,
            CliError::InvariantBreach(_) => 4,
            CliError::Io { .. } | CliError::Internal(_) => 1,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
        move |e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => CliError::Schema(format!("{}: {other:?}", path.display())),
        }
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::Io { path, reason } => CliError::Io {
                path,
                source: io::Error::other(reason),
            },
            other => CliError::Schema(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
