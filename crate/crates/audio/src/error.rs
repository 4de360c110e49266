use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("empty input signal")]
    EmptyInput,

    #[error("input of {len} samples is shorter than one {needed}-sample window")]
    ShortInput { len: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported WAV format: {0}")]
    UnsupportedWav(String),

    #[error("malformed feature file: {0}")]
    Format(String),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;
