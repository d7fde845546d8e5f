use std::fmt;
use std::path::Path;

/// Failure of a cli command, carrying its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// Unreadable, unwritable or malformed files (exit 3).
    Io(String),
    /// The dual solver did not converge (exit 4, `divergence` only).
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub(crate) fn at_line(path: &Path, line: u64, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}:{line}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::NonConvergence(m) => write!(f, "solver did not converge: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Library errors come from bad inputs (dimensions, parameters).
impl From<kale_core::Error> for CliError {
    fn from(e: kale_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
