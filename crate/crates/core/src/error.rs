use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("no usable data rows in input")]
    EmptyInput,

    #[error("no interactions survive the activity filter")]
    EmptyAfterFilter,

    #[error("only one label class is present")]
    DegenerateLabels,

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("client {0} has no training examples")]
    EmptyClient(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no client updates to aggregate")]
    EmptyUpdates,

    #[error(
        "only {eligible} eligible clients, but min_fit_clients = {required}; lower min_fit_clients"
    )]
    NotEnoughClients { eligible: usize, required: usize },

    #[error("confusion counts are empty")]
    EmptyCounts,

    #[error("metric series is empty")]
    EmptySeries,

    #[error("degenerate leaf: hessian sum plus lambda is {0}")]
    DegenerateLeaf(f64),

    #[error("feature count mismatch: model expects {expected}, got {actual}")]
    FeatureMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {kind} file: {reason}")]
    Malformed { kind: &'static str, reason: String },

    #[error("no completed run found at {0}")]
    MissingRun(PathBuf),

    #[error("cannot open {path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn malformed(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            kind,
            reason: reason.into(),
        }
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
