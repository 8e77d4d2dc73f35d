use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tied values in column {column}; use the average-rank policy to accept ties")]
    Ties { column: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed input at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the statistical input itself (ties, malformed data)
    /// rather than by how the run was configured.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Ties { .. } | Error::Csv { .. } | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
