use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// The data violate an invariant of the type they were loaded into.
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine could not produce a result (rank deficiency,
    /// non-positive propensities, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Coarse classification used by front-ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::InvalidData(_)
            | Error::Dimension(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::InvalidArgument(_) | Error::Io(_) | Error::Json(_) => ErrorKind::Usage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
