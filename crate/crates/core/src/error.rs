use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported channel count {0}, only mono is accepted")]
    UnsupportedChannels(u16),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("unsupported resampling ratio {from} Hz -> {to} Hz")]
    UnsupportedRatio { from: u32, to: u32 },
    #[error("frequency {freq_hz} Hz is not below the Nyquist frequency of {rate_hz} Hz audio")]
    InvalidFrequency { freq_hz: f64, rate_hz: u32 },
    #[error("signal of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {k} points, got {points}")]
    InsufficientData { points: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("offset {offset} is smaller than the wide codebook size {wide_k}")]
    OffsetTooSmall { offset: u32, wide_k: u32 },
    #[error("target sequence is already wrapped with boundary tokens")]
    AlreadyWrapped,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("no masked frames")]
    NoMaskedFrames,
    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    TargetTooLong {
        target_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("{utt_id}: {rate_hz} Hz audio is inconsistent with channel tag {channel}")]
    ChannelMismatch {
        utt_id: String,
        rate_hz: u32,
        channel: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for a broken invariant, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
