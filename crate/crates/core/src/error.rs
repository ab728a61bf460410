use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph has already been consumed by a backward pass")]
    GraphConsumed,

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("ratio {ratio} is not served by this model (trained ratios: {trained:?})")]
    UnknownRatio { ratio: f64, trained: Vec<f64> },

    #[error("step size too large: objective grew from {initial:e} to {current:e} at iteration {iteration}")]
    Divergence {
        iteration: usize,
        initial: f64,
        current: f64,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {location}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        location: String,
    },

    #[error("{what} at byte {offset}: {detail}")]
    Format {
        what: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("checkpoint is incompatible with the expected configuration: {0}")]
    Incompatible(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical failure rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFinite { .. })
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::Dataset(_) | Error::Incompatible(_)
        )
    }
}
