use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("face not present in frame {frame}")]
    FaceNotPresent { frame: u64 },

    #[error("malformed frame {frame}: {reason}")]
    MalformedFrame { frame: u64, reason: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("insufficient baseline: {found} valid frames, at least {required} required")]
    InsufficientBaseline { found: usize, required: usize },

    #[error("feature vector is already normalized")]
    AlreadyNormalized,

    #[error("feature vector is not normalized")]
    NotNormalized,

    #[error("insufficient training data: {n} vectors for k = {k}")]
    InsufficientTraining { n: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("empty smoothing window")]
    EmptyWindow,

    #[error("smoothing window mixes raw and normalized vectors")]
    MixedNormalization,

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("non-monotonic timestamps: {next} ms after {prev} ms")]
    NonMonotonicTimestamps { prev: u64, next: u64 },

    #[error("subject {subject} has no alert session to fit a baseline from")]
    MissingAlertBaseline { subject: String },

    #[error("missing class: {0}")]
    MissingClass(&'static str),

    #[error("empty session")]
    EmptySession,

    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("unsupported model version {0:?}")]
    UnsupportedVersion(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
