use thiserror::Error;

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("signal of {len} samples is shorter than the required {required}")]
    SignalTooShort { len: usize, required: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("window does not satisfy constant overlap-add at hop {hop}")]
    NotCola { hop: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("expected a {expected} spectrogram, got {got}")]
    WrongKind { expected: &'static str, got: &'static str },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DspError {
    fn from(e: std::io::Error) -> Self {
        DspError::Io(e.to_string())
    }
}
