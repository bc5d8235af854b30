use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A factorization or parameter update failed for a specific component.
    #[error("numerical failure in component {component}: {reason}")]
    Numerical { component: usize, reason: String },

    #[error("undefined moment: {0}")]
    UndefinedMoment(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(component: usize, reason: impl Into<String>) -> Self {
        Error::Numerical {
            component,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(offset: u64, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            reason: reason.into(),
        }
    }

    /// Attach a component index to errors raised by component-agnostic helpers.
    pub(crate) fn in_component(self, component: usize) -> Self {
        match self {
            Error::InvalidParameter(reason) | Error::UndefinedMoment(reason) => {
                Error::Numerical { component, reason }
            }
            other => other,
        }
    }
}
