use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: duplicate report id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: report id must be non-empty")]
    EmptyId { line: usize },

    #[error("line {line}: feature dimension {found} differs from {expected}")]
    RaggedFeatures {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: features must be finite")]
    NonFiniteFeature { line: usize },

    #[error("terminology is empty")]
    EmptyTerminology,

    #[error("invalid terminology: {0}")]
    InvalidTerminology(String),

    #[error("duplicate anatomy term {0:?}")]
    DuplicateTerm(String),

    #[error("term {0:?} lists its own canonical name as a synonym")]
    SynonymIsCanonical(String),

    #[error("surface form {form:?} is claimed by both {first:?} and {second:?}")]
    AmbiguousSurfaceForm {
        form: String,
        first: String,
        second: String,
    },

    #[error("term {term:?} names undefined parent {parent:?}")]
    DanglingParent { term: String, parent: String },

    #[error("parent links form a cycle through {0:?}")]
    CyclicHierarchy(String),

    #[error("unknown anatomy {0:?}")]
    UnknownAnatomy(String),

    #[error("bad matrix file magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix value at ({row}, {col}) is out of range: {value}")]
    OutOfRange { row: usize, col: usize, value: f32 },

    #[error("matrix with identical row/column ids must be symmetric with unit diagonal (entry {row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("embedding row {row} is zero before normalization")]
    DegenerateEmbedding { row: usize },

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("unknown report id {0:?}")]
    UnknownReport(String),

    #[error("corpus has no feature vectors")]
    MissingFeatures,

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
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
