use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("no MIDI label for take `{0}` (no metadata entry and no `midi<NN>` token in the file name)")]
    MissingLabel(String),

    #[error("silent clip: no analysis window carries energy")]
    SilentClip,

    #[error("clip too short: {len} samples, need more than {min}")]
    ClipTooShort { len: usize, min: usize },

    #[error("sustained region too short: {len} samples, need at least {min}")]
    RegionTooShort { len: usize, min: usize },

    #[error("MIDI label {label} has {count} record(s), need at least 2 to split")]
    TooFewRecords { label: i32, count: usize },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frequency {freq} Hz outside the supported band ({low} .. {high} Hz)")]
    OutOfBand { freq: f64, low: f64, high: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch}: recon={recon}, kl={kl}")]
    Diverged {
        epoch: usize,
        batch: usize,
        recon: f64,
        kl: f64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("sample {value} at index {index} exceeds full scale")]
    Clipping { index: usize, value: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True when the failure is numeric (divergence, non-finite values)
    /// rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
