use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal contains non-finite samples")]
    SignalCorrupt,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
    #[error("invalid participant id {0:?}")]
    InvalidParticipant(String),
    #[error("speaker {0} has too little prior speech for a baseline")]
    NoBaseline(String),
    #[error("at least two participants are required, got {0}")]
    TooFew(usize),
    #[error("item at t={got:.3} arrived after t={last:.3} (beyond reorder tolerance)")]
    OutOfOrder { got: f64, last: f64 },
    #[error("initiating turn at t={turn_t0:.3} is older than the retro horizon (now {now:.3})")]
    Stale { turn_t0: f64, now: f64 },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("no participant pairs are scorable")]
    NoScorablePairs,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid segments: {0}")]
    InvalidSegments(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("config: {0}")]
    Config(String),
    #[error("wav {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::SignalCorrupt => "SIGNAL_CORRUPT",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::InvalidParams { .. } => "INVALID_PARAMS",
            Error::InvalidParticipant(_) => "INVALID_PARTICIPANT",
            Error::NoBaseline(_) => "NO_BASELINE",
            Error::TooFew(_) => "TOO_FEW",
            Error::OutOfOrder { .. } => "OUT_OF_ORDER",
            Error::Stale { .. } => "STALE",
            Error::UnknownPreset(_) => "UNKNOWN_PRESET",
            Error::NoScorablePairs => "NO_SCORABLE_PAIRS",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::InvalidSegments(_) => "INVALID_SEGMENTS",
            Error::InvalidLabels(_) => "INVALID_LABELS",
            Error::Config(_) => "CONFIG",
            Error::Wav { .. } => "WAV",
            Error::Io(_) => "IO",
        }
    }

    /// Whether the error stems from rejected input rather than an environment failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Wav { .. })
    }
}
