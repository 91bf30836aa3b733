use std::path::PathBuf;

use thiserror::Error;

use crate::TrackId;

pub type Result<T, E = FusidError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FusidError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("playlist {playlist_id} references unknown track {track_id}")]
    DanglingTrack { playlist_id: u64, track_id: TrackId },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("track {0} was not seen in training (cold start)")]
    ColdStart(TrackId),

    #[error("normalized co-occurrence undefined for ({0}, {1}): zero playlist count")]
    UndefinedScore(TrackId, TrackId),

    #[error("need at least {required} items, got {actual}")]
    TooFewItems { required: usize, actual: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("track {0} has no semantic ID")]
    MissingSid(TrackId),

    #[error("track {0} is missing a modality feature")]
    MissingFeature(TrackId),

    #[error("test set is not a subset of the full set: track {0}")]
    SubsetViolation(TrackId),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("context of {len} tokens exceeds max_len {max_len}")]
    ContextTooLong { len: usize, max_len: usize },

    #[error("stage `{stage}` is missing its input artifact {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<FusidError>,
    },
}

/// Coarse failure classes, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl FusidError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FusidError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            FusidError::InvalidConfig(_) => ErrorClass::Usage,
            FusidError::NonFinite(_) => ErrorClass::Numeric,
            FusidError::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }
}
