//! Command-level errors carrying the process exit code.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal
//! invariant violation.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong: bad flag values, contradictory
    /// flags, a config file for a different command.
    Usage(String),
    /// Inputs on disk are missing or malformed, or an output location
    /// refuses the write.
    Data(String),
    /// A pipeline invariant broke mid-run.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl std::error::Error for CliError {}

impl From<mexdet_core::Error> for CliError {
    fn from(e: mexdet_core::Error) -> Self {
        match e {
            // Config validation rejects knob values, which reach the core
            // only through flags or --config files.
            mexdet_core::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
