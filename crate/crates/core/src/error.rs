use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("every key of an attention row is masked")]
    AllMasked,

    #[error("empty group in {0}")]
    EmptyGroup(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("zero-norm embedding in contrastive loss")]
    ZeroNorm,

    #[error("annotation line {line}: {kind}")]
    Annotation { line: usize, kind: AnnotationError },

    #[error("feature store: {0}")]
    Store(#[from] StoreError),

    #[error("unknown id {0:?}")]
    MissingId(String),

    #[error("not enough distractors: need {needed}, pool has {available}")]
    InsufficientPool { needed: usize, available: usize },

    #[error("degenerate t-test: both samples have zero variance")]
    DegenerateTest,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Malformed-annotation classes; each has its own variant so callers can tell them apart.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("invalid JSON: {0}")]
    Syntax(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("field {0:?} has the wrong type")]
    WrongType(&'static str),
    #[error("target {target} out of range for {objects} objects")]
    TargetOutOfRange { target: u64, objects: usize },
    #[error("fewer than two objects")]
    TooFewObjects,
    #[error("duplicate object id {0:?}")]
    DuplicateObject(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("dimension {found} does not match expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?} has {len} values, not a multiple of dim {dim}")]
    RaggedRecord { id: String, len: usize, dim: usize },
    #[error("record {0:?} has no rows")]
    EmptyRecord(String),
    #[error("id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("id is not valid UTF-8")]
    Utf8,
    #[error("trailing bytes after last record")]
    TrailingBytes,
}
