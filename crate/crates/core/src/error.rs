use std::path::PathBuf;

/// Errors produced by the toolkit.
///
/// Variants are grouped loosely by the stage that raises them: file formats,
/// input validation, degenerate geometry, and solver configuration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes of payload, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate input: zero vector at row {row}")]
    ZeroRow { row: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("count mismatch: manifest has {manifest} records, embeddings have {embeddings} rows")]
    CountMismatch { manifest: usize, embeddings: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("normal matrix is rank deficient at lambda = {lambda}; use lambda > 0")]
    RankDeficient { lambda: f64 },

    #[error("missing phrase {0:?} in phrase lookup")]
    MissingPhrase(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("undefined: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
