use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected target spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state{}: {what}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    InvalidState {
        what: String,
        iteration: Option<usize>,
    },

    #[error("minimizer search did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("empty sample set")]
    EmptySamples,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn state(what: impl Into<String>) -> Self {
        Error::InvalidState {
            what: what.into(),
            iteration: None,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::InvalidState { what, .. } => Error::InvalidState {
                what,
                iteration: Some(iteration),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
