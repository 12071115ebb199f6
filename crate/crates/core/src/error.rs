use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("sample rate {found} Hz does not match configured {expected} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("clip too short: {len} samples, need at least {needed}")]
    ClipTooShort { len: usize, needed: usize },
    #[error("too few values: {len}, need at least {needed}")]
    TooFewValues { len: usize, needed: usize },
    #[error("mask has {mask} frames but clip framing yields {frames}")]
    MaskMismatch { mask: usize, frames: usize },
    #[error("too few frames: {len}, need at least {needed}")]
    TooFewFrames { len: usize, needed: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("speaker {0} has no data")]
    EmptySpeaker(String),
    #[error("cost became non-finite during training (lambda stage {stage})")]
    DivergedCost { stage: usize },
    #[error("sequence spans {intervals} complete intervals, need at least 2")]
    TooShortForIntervals { intervals: usize },
    #[error("interval {0} received no frames")]
    EmptyInterval(usize),
    #[error("class {0} has fewer than 2 samples")]
    ClassEmpty(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("manifest problem: {0}")]
    MissingManifest(String),
    #[error("speaker {speaker} has only {seconds:.3} s of speech, need {needed:.3} s")]
    SpeakerTooShort { speaker: String, seconds: f64, needed: f64 },
    #[error("cannot place {requested} speakers on {available} distinct F0 slots")]
    TooManySpeakers { requested: usize, available: usize },
    #[error("feature fingerprint mismatch: model {model}, features {features}")]
    FingerprintMismatch { model: String, features: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical core rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::DivergedCost { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
