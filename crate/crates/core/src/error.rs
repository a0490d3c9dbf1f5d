use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in channel {channel} at ({row}, {col})")]
    NonFinite { channel: usize, row: usize, col: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Blow-up, NaN loss and other numerical breakdowns.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 1,
            Error::Shape(_) | Error::NonFinite { .. } | Error::Format(_) | Error::Data(_) | Error::Io(_) | Error::Csv(_) => 2,
            Error::Numeric(_) | Error::Graph(_) | Error::MissingGradient(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            2 => "data",
            _ => "numeric",
        }
    }
}
