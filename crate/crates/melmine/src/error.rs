use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate entity id '{0}'")]
    DuplicateId(String),

    #[error("empty entity id")]
    EmptyId,

    #[error("empty mention id")]
    EmptyMentionId,

    #[error("attribute token is empty after trimming")]
    EmptyAttribute,

    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("mention '{mention}' (line {line}) references unknown entity '{entity}'")]
    DanglingReference {
        mention: String,
        entity: String,
        line: usize,
    },

    #[error("bad magic in '{0}': expected EMB1")]
    BadMagic(PathBuf),

    #[error("'{path}': declared {expected} payload bytes, found {actual}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("invalid embedding header in '{path}': {reason}")]
    InvalidHeader { path: PathBuf, reason: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("band config invalid: {bands} bands x {rows_per_band} rows != signature length {sig_len}")]
    BadBandConfig {
        bands: usize,
        rows_per_band: usize,
        sig_len: usize,
    },

    #[error("index/table was built on a different knowledge base (fingerprint {found:#x}, expected {expected:#x})")]
    IndexMismatch { expected: u64, found: u64 },

    #[error("positive ordinal {0} is not covered by the negative table")]
    PositiveNotInTable(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),

    #[error("view set is empty")]
    EmptyViewSet,

    #[error("shape mismatch for '{name}': expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("row index {row} out of range for store with {rows} rows ({context})")]
    RowOutOfRange {
        row: usize,
        rows: usize,
        context: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
