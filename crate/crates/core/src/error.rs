use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bit width {0} outside supported range 2..=32")]
    InvalidBitWidth(u32),

    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("value {value} does not fit in a {bits}-bit signed integer")]
    OutOfRange { value: i64, bits: u32 },

    #[error("tensor declared binary contains value {0}")]
    NotBinary(i32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("convolution geometry: {0}")]
    Geometry(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{what}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{what}: unsupported version {found}")]
    BadVersion { what: &'static str, found: u32 },

    #[error("{what}: truncated, expected {expected} bytes but found {actual}")]
    Truncated {
        what: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("{what}: dimension mismatch: {detail}")]
    DimMismatch { what: &'static str, detail: String },

    #[error("sample {sample}: channel {channel} out of range (< {limit})")]
    ChannelRange {
        sample: usize,
        channel: u32,
        limit: u32,
    },

    #[error("sample {sample}: events not sorted by time at index {index}")]
    UnsortedEvents { sample: usize, index: usize },

    #[error("sample {sample}: label {label} out of range (< {classes})")]
    LabelRange {
        sample: usize,
        label: u32,
        classes: u32,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(left: &[usize], right: &[usize], context: &'static str) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
            context,
        }
    }

    /// Short category label used for CLI exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::InvalidBitWidth(_) | Error::InvalidParameter(_) => "config",
            Error::Io { .. } => "io",
            Error::BadMagic { .. }
            | Error::BadVersion { .. }
            | Error::Truncated { .. }
            | Error::DimMismatch { .. }
            | Error::ChannelRange { .. }
            | Error::UnsortedEvents { .. }
            | Error::LabelRange { .. }
            | Error::Dataset(_) => "dataset",
            Error::ShapeMismatch { .. }
            | Error::DataLength { .. }
            | Error::OutOfRange { .. }
            | Error::NotBinary(_)
            | Error::Geometry(_) => "shape",
        }
    }
}
