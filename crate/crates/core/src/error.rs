use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or mismatched shapes at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// API misuse, e.g. stepping a finished episode or a non-scalar loss.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid cell: {0}")]
    InvalidCell(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("search space has {size} cells, above the enumeration limit of {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    /// Training produced a non-finite loss. Carries the last α snapshot (JSON) for post-mortem.
    #[error("non-finite loss at env step {step}: {detail}")]
    Diverged {
        step: u64,
        detail: String,
        last_alpha: Option<String>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
