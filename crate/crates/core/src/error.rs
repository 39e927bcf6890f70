use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Not enough observations have been seen to produce a calibrated score.
    #[error("not ready: {0}")]
    NotReady(String),

    #[error("covariance matrix is numerically singular (last ridge {ridge:e})")]
    SingularCovariance { ridge: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: timestamp {timestamp:?} does not increase")]
    NonMonotoneTimestamps {
        path: PathBuf,
        line: usize,
        timestamp: String,
    },

    #[error("dataset {dataset:?} has label timestamps with no matching row: {unmatched:?}")]
    UnmatchedLabels {
        dataset: String,
        unmatched: Vec<String>,
    },

    #[error("dataset {0:?} is not listed in the labels file")]
    MissingDataset(String),

    #[error("perfect and null scores coincide ({0}); the corpus has no anomaly windows")]
    UndefinedCorpus(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
