use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Batch normalization in training mode needs at least two samples per feature.
    #[error("degenerate batch: batch norm in training mode needs at least 2 samples per feature, got {0}")]
    DegenerateBatch(usize),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("degenerate simplex: requested {requested} endmembers but data rank is {rank}")]
    DegenerateSimplex { requested: usize, rank: usize },

    #[error("endmember extraction failed: {0}")]
    Extraction(String),

    #[error("no pure pixel found for classes {0:?}")]
    MissingPureClasses(Vec<usize>),

    #[error("training diverged at epoch {epoch} (lr {lr:e}): {detail}")]
    Diverged { epoch: usize, lr: f64, detail: String },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by inputs or the environment.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Solver { .. }
                | Error::DegenerateSimplex { .. }
                | Error::Diverged { .. }
                | Error::DegenerateBatch(_)
                | Error::Extraction(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}
