use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unannotated example {index}")]
    UnannotatedExample { index: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("log of zero confusion entry (annotator {annotator}, label {label}, class {class})")]
    LogOfZero {
        annotator: usize,
        label: usize,
        class: usize,
    },
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("annotation out of range: {0}")]
    AnnotationOutOfRange(String),
    #[error("internal numerical error: {0}")]
    Numerical(String),
    #[error("empty query set")]
    EmptyQuery,
    #[error("stale or mismatched activation record: {0}")]
    StaleTrace(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        message: message.into(),
    }
}
