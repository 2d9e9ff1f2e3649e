use etnode_core::Error;
use thiserror::Error;

/// A failed command, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or data selection; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or unwritable files; exit code 1.
    #[error("{0}")]
    Io(String),
    /// Divergence or other numeric failure; exit code 3.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint { .. } => CliError::Io(msg),
            Error::Numeric(_) | Error::Solver(_) | Error::Oracle(_) => CliError::Numeric(msg),
            Error::Shape { .. } | Error::Contract(_) | Error::Schema { .. } => CliError::Usage(msg),
        }
    }
}
