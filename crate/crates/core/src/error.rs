//! Error type shared by every module of the crate.

use std::io;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or input file is outside the domain an operation accepts.
    #[error("invalid input: {0}")]
    InputDomain(String),

    /// Exhaustive enumeration was refused because the space is too large.
    #[error("sequence space of {size} exceeds the enumeration cap of {cap} states")]
    Capacity { size: String, cap: u64 },

    /// A remote backend could not be reached after all retries.
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },

    /// The backend answered with a 4xx status.
    #[error("request rejected with HTTP {status}: {message}")]
    RequestRejected { status: u16, message: String },

    /// A backend returned a payload we cannot use (missing field, non-finite score, ...).
    #[error("invalid backend data: {0}")]
    Data(String),

    /// Prompt-level advantage statistics were already fitted for this chain.
    #[error("advantage statistics are frozen after initialization")]
    StatsFrozen,

    /// Failure while building the Stage I pool.
    #[error("initialization failed at pool member {index} of {pool_size}: {source}")]
    Pool {
        index: usize,
        pool_size: usize,
        #[source]
        source: Box<Error>,
    },

    /// Failure inside one refinement step.
    #[error("refinement step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }
}
