use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("run aborted after {events} events (limit {limit}): pathological configuration")]
    TooManyEvents { events: u64, limit: u64 },
    #[error("density too high: {0}")]
    DensityTooHigh(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("time step rejected: {0}")]
    StepRejected(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("io: {0}")]
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
