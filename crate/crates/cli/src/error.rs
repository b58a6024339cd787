use std::path::{Path, PathBuf};
use thiserror::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files, schema violations.
    #[error("{0}")]
    Input(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// The solve ran but no schedule met the comfort cap. The least-violating
    /// schedule has already been written.
    #[error("no schedule satisfies the comfort cap (least total violation {violation})")]
    Infeasible { violation: f64 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::InsufficientData(_) => 3,
            CliError::Infeasible { .. } => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
