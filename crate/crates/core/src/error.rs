use thiserror::Error;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("schema mismatch: expected `{expected}`, got `{actual}`")]
    SchemaMismatch { expected: String, actual: String },

    #[error("schema `{0}` does not declare eye landmark sets")]
    MissingEyeSets(String),

    #[error("unknown schema `{0}`")]
    UnknownSchema(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("document error: {0}")]
    Document(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("shape error in document: {0}")]
    ShapeError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
