use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt checkpoint {path} at byte {offset}: {detail}")]
    CorruptCheckpoint { path: PathBuf, offset: usize, detail: String },

    #[error("no usable participants in {0}")]
    EmptyDataset(PathBuf),

    #[error("{path}: {detail}")]
    Data { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] distillfuse_core::Error),

    #[error(transparent)]
    Audio(#[from] distillfuse_audio::AudioError),

    #[error(transparent)]
    Text(#[from] distillfuse_text::TextError),

    #[error(transparent)]
    Eval(#[from] distillfuse_eval::EvalError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| PipelineError::Io {
            path: path.into(),
            source,
        })
    }
}
