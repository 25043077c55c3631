use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("embedding/metadata alignment: {0}")]
    Alignment(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("row {row} has zero norm")]
    DegenerateVector { row: usize },

    #[error("taxonomy schema: {0}")]
    Schema(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("similarity distribution is degenerate (std {std:e} < 1e-12)")]
    DegenerateDistribution { std: f64 },

    #[error("empty retrieval")]
    EmptyRetrieval,

    #[error("group {0} selects no rows or every row")]
    InvalidGroup(String),

    #[error("{0}")]
    Domain(String),

    #[error("reports are not comparable: {0}")]
    Comparability(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with any context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than by
    /// the numbers themselves.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self.root(),
            Error::DegenerateVector { .. }
                | Error::DegenerateDistribution { .. }
                | Error::EmptyRetrieval
                | Error::InvalidGroup(_)
                | Error::Domain(_)
                | Error::State(_)
                | Error::Dim { .. }
        )
    }
}
