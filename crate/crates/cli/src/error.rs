use std::io;
use std::path::Path;

use thiserror::Error;

use relx::classifier::ClassifierError;

/// Every failure maps to one of two exit codes: 1 for invalid input or
/// configuration, 2 for I/O and remote-protocol failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> CliError {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// Remote failures are protocol errors whatever their kind; locally they
    /// split into I/O and validation.
    pub fn classifier(context: &str, e: ClassifierError, remote: bool) -> CliError {
        let msg = format!("{context}: {e}");
        match e {
            ClassifierError::Io(_) | ClassifierError::Transport(_) | ClassifierError::Protocol(_) => CliError::Io(msg),
            ClassifierError::InvalidConfig(_) => CliError::Validation(msg),
            _ if remote => CliError::Io(msg),
            _ => CliError::Validation(msg),
        }
    }
}
