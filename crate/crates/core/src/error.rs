use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the pipeline.
///
/// Variants are grouped by the stage that raises them; I/O failures always
/// carry the offending path.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav {path}: {detail}")]
    MalformedWav { path: PathBuf, detail: String },

    #[error("unsupported wav encoding in {path}: {detail}")]
    UnsupportedWav { path: PathBuf, detail: String },

    #[error("sample {value} at index {index} is outside [-1, 1]; refusing to clip on save")]
    SampleOutOfRange { index: usize, value: f64 },

    #[error("insufficient voiced frames: need at least 2, found {found}")]
    InsufficientVoicedFrames { found: usize },

    #[error("f0 statistics have zero standard deviation")]
    ZeroStd,

    #[error("quantized bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },

    #[error("feature dim mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("feature rate mismatch: expected {expected} Hz, found {found} Hz")]
    RateMismatch { expected: u32, found: u32 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("upsample ratio {to_rate}/{from_rate} is not an integer")]
    NonIntegerRatio { from_rate: u32, to_rate: u32 },

    #[error("stream misalignment: f0 stream has {f0_frames} frames, content has {content_frames} (tolerance {tolerance})")]
    StreamMisalignment {
        f0_frames: usize,
        content_frames: usize,
        tolerance: usize,
    },

    #[error("conditioning width mismatch: generator expects {expected}, block has {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error("waveform length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("singer id {id} out of range (registry holds {count})")]
    SingerOutOfRange { id: usize, count: usize },

    #[error("unknown singer {name:?}")]
    UnknownSinger { name: String },

    #[error("duplicate singer id {id} in registry")]
    DuplicateSingerId { id: usize },

    #[error("checkpoint fingerprint mismatch: checkpoint was written for a different run config")]
    FingerprintMismatch,

    #[error("malformed checkpoint {path}: {detail}")]
    MalformedCheckpoint { path: PathBuf, detail: String },

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code buckets used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::WidthMismatch { .. } => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
