use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed record in an input file.
    #[error("{source_name}:{line}: {message}")]
    Ingest {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("unknown item id `{id}` at line {line}")]
    UnknownItem { id: String, line: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no in-vocabulary words")]
    EmptyQuery,

    #[error("cosine score is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: file is truncated")]
    Truncated { path: PathBuf },

    #[error("{path}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("{path}: not a recognised block file")]
    BadMagic { path: PathBuf },

    #[error("model kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("{} id(s) missing from the new corpus (pass the prune option to drop them): {}", .0.len(), .0.join(", "))]
    RemovedIds(Vec<String>),

    #[error("non-finite value produced in block {block} row {row}")]
    NonFinite { block: &'static str, row: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },

    #[error("problem too large for exhaustive evaluation: {0}")]
    TooLarge(String),

    #[error("synthetic corpus spec rejected: {0}")]
    Synthetic(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
