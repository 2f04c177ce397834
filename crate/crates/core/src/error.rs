use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, TtsError>;

#[derive(Debug, thiserror::Error)]
pub enum TtsError {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Dsp(#[from] fnh_dsp::DspError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("phoneme id {id} is outside the vocabulary of {size} symbols")]
    OutOfVocabulary { id: u32, size: usize },
    #[error("unknown speaker id {id}; valid ids are 0..{count}")]
    UnknownSpeaker { id: u32, count: usize },
    #[error("no valid alignment: {frames} frames for {text_len} phonemes")]
    NoAlignment { text_len: usize, frames: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint schema version {found} does not match supported version {expected}")]
    SchemaMismatch { found: String, expected: String },
    #[error("config: {0}")]
    Config(String),
    #[error("textgrid: {0}")]
    TextGrid(String),
    #[error("audio: {0}")]
    Audio(String),
}

impl TtsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TtsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            TtsError::Tensor(_) => "tensor",
            TtsError::Dsp(_) => "dsp",
            TtsError::Io { .. } => "io",
            TtsError::InvalidInput(_) => "invalid-input",
            TtsError::Shape(_) => "shape",
            TtsError::NonFinite(_) => "non-finite",
            TtsError::OutOfVocabulary { .. } => "out-of-vocabulary",
            TtsError::UnknownSpeaker { .. } => "unknown-speaker",
            TtsError::NoAlignment { .. } => "no-alignment",
            TtsError::Dataset(_) => "dataset",
            TtsError::Checkpoint(_) => "checkpoint",
            TtsError::SchemaMismatch { .. } => "schema-mismatch",
            TtsError::Config(_) => "config",
            TtsError::TextGrid(_) => "textgrid",
            TtsError::Audio(_) => "audio",
        }
    }
}
