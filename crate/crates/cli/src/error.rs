use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hyperphylo::error::Error),
}

impl CliError {
    /// 3 for numeric aborts, 2 for everything caused by the input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(hyperphylo::error::Error::Numeric(_)) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
