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

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("binary size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },

    #[error("non-finite value in column {column} (row {row})")]
    NonFinite { column: usize, row: usize },

    #[error("column count mismatch: matrix has {matrix}, manifest has {manifest}")]
    CountMismatch { matrix: usize, manifest: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate dimension: embeddings must have dim >= 1")]
    ZeroDimension,

    #[error("dangling pair member for pair_id {0:?}")]
    DanglingPair(String),

    #[error("lambda must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("decomposition failed: {0}")]
    Decomposition(&'static str),

    #[error("need at least {needed} {what}, found {found}")]
    TooFew {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("class embedding annihilated by projection (class {0})")]
    ClassAnnihilated(usize),

    #[error("zero-norm {what} at index {index}")]
    ZeroNorm { what: &'static str, index: usize },

    #[error("groups with no items: {}", format_groups(.0))]
    EmptyGroups(Vec<(usize, usize)>),

    #[error("index {index} out of range for {what} (size {size})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid cutoff k={k} for {available} available items")]
    InvalidCutoff { k: usize, available: usize },

    #[error("{0}")]
    Invalid(String),
}

fn format_groups(groups: &[(usize, usize)]) -> String {
    groups
        .iter()
        .map(|(y, a)| format!("(y={y}, a={a})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
