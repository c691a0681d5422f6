use std::fmt;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("infinite privacy loss: noise multiplier is zero")]
    InfinitePrivacyLoss,
    #[error("invalid Rényi order {0} (must exceed 1)")]
    InvalidOrder(f64),
    #[error("invalid sampling rate {0} (must lie in [0, 1])")]
    InvalidRate(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no noise multiplier in [{lo}, {hi}] reaches epsilon {target}")]
    CalibrationOutOfRange { target: f64, lo: f64, hi: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid backward root: {0}")]
    InvalidRoot(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid clipping threshold {0}")]
    InvalidThreshold(f64),
    #[error("invalid noise multiplier {0}")]
    InvalidNoise(f64),
    #[error("invalid mechanism parameters: {0}")]
    InvalidParams(String),
    #[error("invalid noise scale {0}")]
    InvalidScale(f64),
    #[error("data error: {0}")]
    Data(String),
    #[error("corrupt data at byte {offset}: {reason}")]
    CorruptData { offset: u64, reason: String },
    #[error("experiment `{id}` failed: {reason}")]
    Experiment { id: String, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of an [`Error`], stable across releases.
///
/// The FFI layer maps these onto integer status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    InfinitePrivacyLoss,
    InvalidArgument,
    CalibrationOutOfRange,
    Shape,
    Config,
    Data,
    Parse,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InfinitePrivacyLoss => ErrorKind::InfinitePrivacyLoss,
            Error::InvalidOrder(_)
            | Error::InvalidRate(_)
            | Error::InvalidInput(_)
            | Error::InvalidThreshold(_)
            | Error::InvalidNoise(_)
            | Error::InvalidParams(_)
            | Error::InvalidScale(_)
            | Error::Label { .. }
            | Error::InvalidRoot(_) => ErrorKind::InvalidArgument,
            Error::CalibrationOutOfRange { .. } => ErrorKind::CalibrationOutOfRange,
            Error::Shape(_) => ErrorKind::Shape,
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::CorruptData { .. } | Error::Experiment { .. } => ErrorKind::Data,
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
