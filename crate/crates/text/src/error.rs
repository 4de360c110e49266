use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("transcript line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("invalid argument: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TextError>;
