use thiserror::Error;

/// Errors produced by model construction, filtering, and schedule optimization.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The 2x2 innovation covariance could not be factorized. Unreachable
    /// when the measurement noise is strictly positive definite.
    #[error("singular innovation covariance in measurement update")]
    SingularInnovation,

    /// The batch measurement covariance could not be factorized, which
    /// signals a degenerate tilt sequence combined with near-zero noise.
    #[error("ill-conditioned schedule: {0}")]
    IllConditionedSchedule(String),

    /// Every EM initialization diverged; no noise estimate is available.
    #[error("all EM initializations diverged: {0}")]
    AllInitializationsDiverged(String),

    /// File or serialization failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
