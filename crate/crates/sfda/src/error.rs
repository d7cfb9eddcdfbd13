use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by origin: numerical preconditions, data
/// validation, and file I/O. The CLI maps these onto exit codes, so new
/// variants should keep the grouping in mind.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("label {label} at index {index} is out of range (num_classes = {num_classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error(
        "matrix is not positive definite (smallest Cholesky pivot {pivot:e} <= tolerance {tolerance:e})"
    )]
    NotPositiveDefinite { pivot: f64, tolerance: f64 },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("input vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("k = {k} exceeds the number of models ({len})")]
    KTooLarge { k: usize, len: usize },

    #[error("{what} has zero variance")]
    ZeroVariance { what: &'static str },

    #[error("labels of model '{model_id}' differ from the first model in the hub")]
    LabelMismatch { model_id: String },

    #[error(
        "model '{model_id}' has feature dimension {feature_dim} < C-1 = {required}; \
         its Fisher embedding cannot be stacked with the others"
    )]
    HeterogeneousProjection {
        model_id: String,
        feature_dim: usize,
        required: usize,
    },

    #[error("need at least {need} models, got {got}")]
    TooFewModels { got: usize, need: usize },

    #[error("scoring model '{model_id}' failed in stage {stage}: {source}")]
    StageFailed {
        model_id: String,
        stage: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("duplicate model id '{model_id}' in manifest")]
    DuplicateModelId { model_id: String },

    #[error(
        "model '{model_id}': declared feature dimension {declared} does not match file header ({found})"
    )]
    FeatureDimMismatch {
        model_id: String,
        declared: usize,
        found: usize,
    },

    #[error("model '{model_id}': feature file has {found} rows but the hub has {expected} labels")]
    SampleCountMismatch {
        model_id: String,
        expected: usize,
        found: usize,
    },

    #[error("model id sets differ; only in scores: {only_in_scores:?}, only in ground truth: {only_in_truth:?}")]
    ModelIdMismatch {
        only_in_scores: Vec<String>,
        only_in_truth: Vec<String>,
    },

    #[error("{path}: bad magic bytes {found:02x?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
        found: Vec<u8>,
    },

    #[error("{path}: unsupported format version {version}")]
    VersionUnsupported { path: PathBuf, version: u32 },

    #[error("{path}: truncated payload, data ends at byte offset {offset} of {expected} expected")]
    TruncatedPayload {
        path: PathBuf,
        offset: u64,
        expected: u64,
    },

    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFiniteValue { path: PathBuf, offset: u64 },

    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("{path}, line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("refusing to write a report with no rows")]
    EmptyReport,

    #[error("invalid synthetic hub spec: {message}")]
    SpecInvalid { message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure in {what}")]
    Numerical { what: &'static str },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
