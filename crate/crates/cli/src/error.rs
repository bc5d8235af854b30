use std::fmt;

use vbgs_core::Error;

/// Failure classes with their exit codes: configuration 1, I/O 2, numerical 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// An I/O error that names the file involved.
    pub fn io_at(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Parse { .. } | Error::Checkpoint(_) => CliError::Io(msg),
            Error::Numerical { .. } | Error::UndefinedMoment(_) => CliError::Numerical(msg),
            Error::InvalidParameter(_) | Error::InvalidArgument(_) | Error::Dimension { .. } => {
                CliError::Config(msg)
            }
        }
    }
}

/// Attaches a path to library errors from loaders.
pub trait WithPath<T> {
    fn at(self, path: &std::path::Path) -> Result<T, CliError>;
}

impl<T> WithPath<T> for vbgs_core::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T, CliError> {
        self.map_err(|e| match CliError::from(e) {
            CliError::Io(m) => CliError::io_at(path, m),
            other => other,
        })
    }
}
