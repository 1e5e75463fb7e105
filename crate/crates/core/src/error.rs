use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few directions for stable optimization ({0} < 6)")]
    TooFewDirections(usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scheme must contain all trained b-values (missing b={0})")]
    MissingShell(f64),

    #[error("underdetermined fit; increase directions or lambda")]
    Underdetermined,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Stable process exit code: 1 usage, 2 data/format, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::TooFewDirections(_) => 1,
            Error::Parse { .. }
            | Error::Shape(_)
            | Error::MissingShell(_)
            | Error::Format(_)
            | Error::Io(_) => 2,
            Error::Underdetermined | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
