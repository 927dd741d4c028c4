use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("coefficient file {path}: {msg}")]
    CoefficientFile { path: PathBuf, msg: String },
    #[error("diagnostics: {0}")]
    Diagnostics(String),
    #[error("unknown validation case {0:?}")]
    UnknownCase(String),
    #[error(transparent)]
    Core(#[from] dropsim_core::Error),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io {
        path: path.to_path_buf(),
        source,
    }
}
