use std::path::Path;

use focusqa_core::{BackendError, PipelineError, StoreError};
use thiserror::Error;

pub const EXIT_QUERIES_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_NOT_FOUND: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("{failed} of {total} queries failed")]
    QueriesFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Store(StoreError::NotFound(_)) => EXIT_NOT_FOUND,
            CliError::Store(_) => EXIT_USAGE,
            CliError::Pipeline(e) if e.is_not_found() => EXIT_NOT_FOUND,
            CliError::Pipeline(PipelineError::Backend { .. }) => EXIT_BACKEND,
            CliError::Pipeline(_) => EXIT_USAGE,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::QueriesFailed { .. } => EXIT_QUERIES_FAILED,
        }
    }
}
