use std::path::PathBuf;

use thiserror::Error;

/// Every failure the simulator can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("non-finite loss in round {round}, client {client}: {detail}")]
    NonFiniteLoss {
        round: usize,
        client: usize,
        detail: String,
    },

    #[error("format error in {field}: {detail}")]
    Format { field: String, detail: String },

    #[error("partition infeasible: client {client} has {count} samples after {retries} retries (need {min})")]
    PartitionInfeasible {
        client: usize,
        count: usize,
        min: usize,
        retries: usize,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Contract(_) | Error::Index(_) => 1,
            Error::Format { .. }
            | Error::PartitionInfeasible { .. }
            | Error::Split(_)
            | Error::Io { .. }
            | Error::Aggregation(_) => 2,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => 3,
        }
    }
}
