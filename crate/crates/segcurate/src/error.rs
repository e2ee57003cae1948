use std::path::PathBuf;

use segcurate_core::labelmap::MapError;
use segcurate_core::mcoc::McocError;
use segcurate_core::metrics::MetricsError;
use segcurate_core::sampling::SamplingError;
use segcurate_core::taxonomy::TaxonomyError;

use crate::bridge::BridgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: malformed image: {message}")]
    Image { context: String, message: String },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Map {
        context: String,
        #[source]
        source: MapError,
    },
    #[error("{context}: {source}")]
    Taxonomy {
        context: String,
        #[source]
        source: TaxonomyError,
    },
    #[error(transparent)]
    Mcoc(#[from] McocError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn map(context: impl Into<String>, source: MapError) -> Self {
        Error::Map {
            context: context.into(),
            source,
        }
    }

    pub fn taxonomy(context: impl Into<String>, source: TaxonomyError) -> Self {
        Error::Taxonomy {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for configuration problems, 4 for
    /// worker protocol failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Bridge(b) if b.is_protocol() => 4,
            _ => 1,
        }
    }
}
