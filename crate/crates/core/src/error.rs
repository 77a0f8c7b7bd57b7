use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected {expected} columns, got {found}")]
    LayerDimension {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache does not match the layers it is used with: {0}")]
    StaleCache(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{0} column not found")]
    MissingColumn(String),

    #[error("unparseable cell at row {row}, column {column:?}: {value:?}")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("class {code} has {count} row(s); stratified split needs at least 2")]
    ClassTooSmall { code: u32, count: usize },

    #[error("value at row {row}, column {column:?} falls outside every bin: {value}")]
    OutsideBins {
        row: usize,
        column: String,
        value: String,
    },

    #[error("not a model file")]
    NotAModelFile,

    #[error("unsupported model format version {found} (this build reads up to version {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("model file truncated: {0}")]
    Truncated(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
