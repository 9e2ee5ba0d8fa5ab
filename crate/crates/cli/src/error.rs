use std::fmt;

use tactile_core::Error;

pub const EXIT_OK: i32 = 0;
/// Any failure without a more specific code.
pub const EXIT_FAILURE: i32 = 1;
/// Invalid config or command line (clap usage errors also exit with 2).
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
/// Solver non-convergence or a failed factorization.
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_MODE_MISMATCH: i32 = 5;
/// Corrupt or unrecognized file contents.
pub const EXIT_FORMAT: i32 = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, message)
    }

    /// Prefixes the message with what was being attempted.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Image(_) => EXIT_IO,
        Error::Convergence { .. } | Error::Factorization(_) => EXIT_SOLVER,
        Error::ModeMismatch(_) => EXIT_MODE_MISMATCH,
        Error::Format(_) | Error::Json(_) => EXIT_FORMAT,
        Error::Domain(_)
        | Error::BehindCamera { .. }
        | Error::Contract(_)
        | Error::NoConsensus { .. }
        | Error::EmptyRegion(_) => EXIT_FAILURE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}
