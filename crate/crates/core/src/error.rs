use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid convolution spec: {0}")]
    ConvSpec(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("input {h}x{w} is not divisible by {multiple}")]
    Indivisible { h: usize, w: usize, multiple: usize },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("parameter key mismatch: {0}")]
    KeyMismatch(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFinite { iter: usize, detail: String },

    #[error("no expansion configuration within 10% of {target} parameters (closest: {closest})")]
    Unreachable { target: u64, closest: u64 },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
