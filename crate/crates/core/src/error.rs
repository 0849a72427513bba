use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix `{name}` is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite {
        name: String,
        pivot: usize,
        value: f64,
    },

    #[error("Newton optimisation did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("{} point(s) fall outside their campaign domain (rows {rows:?})", rows.len())]
    PointsOutsideDomain { rows: Vec<usize> },

    #[error("covariate `{name}` is missing at grid cell {cell}")]
    MissingCovariate { name: String, cell: usize },

    #[error("expected total count {0:e} exceeds the simulation limit; rescale the intensity")]
    IntensityOverflow(f64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
