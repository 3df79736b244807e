use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::objective::ObjectiveError;
use crate::perturb::PerturbError;
use crate::threat::ThreatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Objective(#[from] ObjectiveError),

    #[error(transparent)]
    Perturb(#[from] PerturbError),

    #[error(transparent)]
    Threat(#[from] ThreatError),

    #[error("enumeration of {required} variants exceeds the cap of {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("unknown seed id `{0}`")]
    UnknownSeed(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// True when the failure came from the threat model boundary.
    pub fn is_threat(&self) -> bool {
        matches!(self, Error::Threat(_))
    }
}
