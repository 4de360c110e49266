use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("AUC is undefined when all labels belong to one class")]
    UndefinedAuc,

    #[error("{path}: line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
