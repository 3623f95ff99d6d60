use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular or indefinite system: {0}")]
    Singular(String),

    #[error("domain violation at linear index {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite objective at outer iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
