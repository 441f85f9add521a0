use std::path::PathBuf;

use narvb_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column {column}: cannot parse {cell:?} as a number")]
    Parse { path: PathBuf, line: u64, column: usize, cell: String },

    #[error("{path}: line {line} has {found} cells, expected {expected}")]
    RaggedRows { path: PathBuf, line: u64, found: usize, expected: usize },

    #[error("{path}: line {line}, column {column}: non-finite value {cell:?}")]
    NonFiniteCell { path: PathBuf, line: u64, column: usize, cell: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Model(#[from] CoreError),

    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), message: message.into() }
    }

    /// 0 success, 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::RaggedRows { .. }
            | CliError::NonFiniteCell { .. }
            | CliError::Format { .. } => 2,
            CliError::Verify(_) => 3,
            CliError::Model(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::InvalidHyperParams(_) => 1,
                CoreError::NonFinite { .. }
                | CoreError::SingularDesign
                | CoreError::SingularPrecision { .. }
                | CoreError::NotPositiveDefinite { .. }
                | CoreError::ExplosivePath { .. } => 3,
                _ => 2,
            },
        }
    }
}
