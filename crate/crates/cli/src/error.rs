use std::fmt;

use sdmforge_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MISSING: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A model or input file the command needs does not exist.
    MissingArtifact(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::MissingArtifact(_) => EXIT_MISSING,
            CliError::Core(e) => match e {
                Error::OutOfRange { .. }
                | Error::InvalidConfig(_)
                | Error::UnknownBackend(_)
                | Error::InvalidGrid(_)
                | Error::ShapeMismatch(_) => EXIT_USAGE,
                Error::Io(_) | Error::Format { .. } | Error::Json(_) => EXIT_IO,
                Error::BackendUnavailable(..) => EXIT_MISSING,
                _ => EXIT_FAILURE,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::MissingArtifact(m) => write!(f, "missing artifact: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}
