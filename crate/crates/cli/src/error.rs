use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` given twice")]
    DuplicateKey(String),
    #[error("config key `{key}`: cannot use `{value}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] crowdmeta::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("metrics json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use crowdmeta::Error as E;
        match self {
            CliError::Syntax { .. }
            | CliError::UnknownKey(_)
            | CliError::DuplicateKey(_)
            | CliError::BadValue { .. }
            | CliError::Usage(_)
            | CliError::Core(E::InvalidParameter { .. }) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
            _ => EXIT_DATA,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
