use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid category: {0:?} is empty after canonicalization")]
    InvalidCategory(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("malformed json: {0}")]
    MalformedJson(#[from] serde_json::Error),

    #[error("unknown category reference: {0}")]
    UnknownCategoryReference(String),

    #[error("unknown image reference: {0}")]
    UnknownImageReference(String),

    #[error("negative dimension: {0}")]
    NegativeDimension(String),

    #[error("duplicate category: {0:?}")]
    DuplicateCategory(String),

    #[error("unsupported schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("proposal csv header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },

    #[error("proposal csv row {row}: expected {expected} fields, found {found}")]
    RowArity {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("proposal csv row {row}, column {column}: {value:?} is not numeric")]
    NonNumericField {
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing category {category:?} in source {source_dataset:?}")]
    MissingCategory {
        source_dataset: String,
        category: String,
    },

    #[error("missing pool for source dataset {0:?}")]
    MissingPool(String),

    #[error("category {0:?} selected by more than one source")]
    DuplicateCategoryAcrossSelections(String),

    #[error("{positives} positives exceed vocabulary capacity {capacity}")]
    PositivesExceedCapacity { positives: usize, capacity: usize },

    #[error("positive category {0:?} is not in the registry")]
    UnknownPositive(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown category in detections: {0:?}")]
    UnknownCategory(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("service unreachable at {endpoint}: {message}")]
    ServiceUnreachable { endpoint: String, message: String },

    #[error("malformed service response: {0}")]
    MalformedResponse(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable kebab-case tag used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCategory(_) => "invalid-category",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::InvalidBox(_) => "invalid-box",
            Error::MalformedJson(_) => "malformed-json",
            Error::UnknownCategoryReference(_) => "unknown-category-reference",
            Error::UnknownImageReference(_) => "unknown-image-reference",
            Error::NegativeDimension(_) => "negative-dimension",
            Error::DuplicateCategory(_) => "duplicate-category",
            Error::SchemaVersion { .. } => "schema-version",
            Error::HeaderMismatch { .. } => "header-mismatch",
            Error::RowArity { .. } => "row-arity-error",
            Error::NonNumericField { .. } => "non-numeric-field",
            Error::Csv(_) => "csv",
            Error::MissingCategory { .. } => "missing-category",
            Error::MissingPool(_) => "missing-pool",
            Error::DuplicateCategoryAcrossSelections(_) => "duplicate-category-across-selections",
            Error::PositivesExceedCapacity { .. } => "positives-exceed-capacity",
            Error::UnknownPositive(_) => "unknown-positive",
            Error::EmptyInput(_) => "empty-input",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::LabelOutOfRange { .. } => "label-out-of-range",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::UnknownCategory(_) => "unknown-category",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::ServiceUnreachable { .. } => "service-unreachable",
            Error::MalformedResponse(_) => "malformed-response",
            Error::Image(_) => "image",
            Error::Io(_) => "io",
        }
    }
}
