//! Error type shared across the pipeline stages.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input line in a delimited log or table file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// A required column is absent from a file header.
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },

    #[error("empty scan window")]
    EmptyScanWindow,

    #[error("invalid distance {0} cm (must be > 0)")]
    InvalidDistance(f64),

    #[error("invalid thresholds: very_close {very_close} dB must be below close {close} dB")]
    InvalidThresholds { very_close: f64, close: f64 },

    #[error("unfingerprintable record: no capability fields")]
    Unfingerprintable,

    /// Samples reference devices that are absent from a lookup table.
    #[error("unknown devices: {}", .0.join(", "))]
    UnknownDevices(Vec<String>),

    #[error("no ground-truth rows available")]
    NoGroundTruth,

    #[error("device {device}: no very-close profile entries, cannot calibrate")]
    MissingVeryClose { device: String },

    /// Hard calibration constraints cannot all be satisfied.
    #[error("calibration infeasible for {device}: {detail}")]
    Infeasible { device: String, detail: String },

    #[error("empty cell: class {class} in environment {environment}")]
    EmptyCell { class: String, environment: String },

    #[error("upsample target {target} below largest cell size {largest}")]
    TargetTooSmall { target: usize, largest: usize },

    #[error("class {class}: pool has {available} rows, need {needed}")]
    InsufficientPool {
        class: String,
        available: usize,
        needed: usize,
    },

    #[error("run {0} is not listed in the run metadata")]
    UnknownRun(String),

    #[error("run {0} has no setup marker (expected `ground_truth` or `scenario`)")]
    UnmarkedRun(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
