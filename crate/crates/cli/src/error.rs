use std::fmt;

use rankmerge::ensemble::EnsembleError;
use rankmerge::Error;

/// A failure mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, values or config file (exit 1).
    Usage(String),
    /// Input files that are missing, malformed or inconsistent (exit 2).
    Data(String),
    /// Anything else, e.g. failing to write output (exit 3).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Internal(_) => 3,
        }
    }

    /// Classifies a library error, prefixing `context`.
    pub fn from_lib(context: &str, err: Error) -> Self {
        let msg = if context.is_empty() {
            err.to_string()
        } else {
            format!("{context}: {err}")
        };
        match err {
            Error::Spec(_)
            | Error::Ensemble(EnsembleError::InvalidConfig(_))
            | Error::Ensemble(EnsembleError::AlphaOutOfRange(_)) => Self::Usage(msg),
            _ => Self::Data(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Self::Usage(m) | Self::Data(m) | Self::Internal(m)) = self;
        // Diagnostics stay on one line.
        f.write_str(&m.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}
