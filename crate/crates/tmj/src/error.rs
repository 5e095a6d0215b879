use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 2;
    pub const IO: u8 = 3;
    pub const INTERNAL: u8 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: config, schema, cohort contents, request fields.
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// A property the pipeline guarantees did not hold.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_) => exit::VALIDATION,
            Error::Io { .. } => exit::IO,
            Error::Internal(_) => exit::INTERNAL,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        Error::Validation(msg.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Error {
            fn from(e: $t) -> Self {
                Error::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    tmj_core::SchemaError,
    tmj_core::CohortError,
    tmj_core::PreprocessError,
    tmj_core::sampling::SamplingError,
    tmj_core::synth::SynthError,
    tmj_core::ConformalError,
    tmj_core::ForestError,
    tmj_core::MetricsError
);

impl From<tmj_core::ExplainError> for Error {
    fn from(e: tmj_core::ExplainError) -> Self {
        Error::Internal(e.to_string())
    }
}
