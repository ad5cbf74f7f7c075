use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("empty image")]
    EmptyImage,

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("incompatible histograms: {0}")]
    IncompatibleHistograms(String),

    #[error("sinkhorn diverged; decrease cost scale or raise epsilon ({0})")]
    SinkhornDiverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot balance: {0}")]
    CannotBalance(String),

    #[error("predictions without a matching label: {}", .0.join(", "))]
    OrphanPredictions(Vec<String>),

    #[error("duplicate prediction for {0}")]
    DuplicatePrediction(String),

    #[error("{path}:{line}: malformed prediction record: {message}")]
    Prediction {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot aggregate runs across different cells: {0}")]
    MixedCells(String),

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("{failed} of {total} records failed, above the {threshold} failure threshold")]
    TooManyFailures {
        failed: usize,
        total: usize,
        threshold: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for bad inputs, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Encode(_) | Error::TooManyFailures { .. } => 1,
            Error::SinkhornDiverged(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
