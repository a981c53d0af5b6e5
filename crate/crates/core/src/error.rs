use thiserror::Error;

/// Errors surfaced by estimators, fixtures and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("points and probabilities differ in length ({points} vs {probs})")]
    LengthMismatch { points: usize, probs: usize },

    #[error("probabilities must be nonnegative and sum to 1 (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("malformed query: {0}")]
    MalformedQuery(String),

    #[error("budget {budget} is below the required minimum {required}")]
    InfeasibleBudget { budget: u64, required: u64 },

    #[error("hard-instance construction is invalid: {0}")]
    InvalidConstruction(String),

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
