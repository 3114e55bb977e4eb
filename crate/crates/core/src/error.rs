use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("no samples could be ingested")]
    EmptyCorpus,

    #[error("duplicate path in manifest: {0}")]
    DuplicatePath(String),

    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {version} at byte {offset}")]
    UnsupportedVersion { version: u8, offset: usize },

    #[error("file truncated at byte {offset}: needed {needed} more bytes")]
    TruncatedFile { offset: usize, needed: usize },

    #[error("malformed data at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("k = {k} exceeds the {n} training samples")]
    KTooLarge { k: usize, n: usize },

    #[error("class {0:?} has no samples")]
    DegenerateClass(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("metric requires a binary task, got {0} classes")]
    NotBinary(usize),

    #[error("only one class present in labels")]
    SingleClass,

    #[error("embeddings missing for {} ids: {}", .0.len(), .0.join(", "))]
    MissingEmbedding(Vec<String>),

    #[error("image store lacks {} ids: {}", .0.len(), .0.join(", "))]
    MissingRecord(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged(_))
    }
}
