use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("weights must be nonnegative and sum to 1 (sum = {sum})")]
    WeightSum { sum: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("local SGD diverged at step {step}")]
    LocalDivergence { step: usize },

    #[error("training diverged at round {round}")]
    Diverged { round: usize },

    #[error("missing history: {0}")]
    MissingHistory(&'static str),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
