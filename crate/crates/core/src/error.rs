use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data is inconsistent (out-of-range times, mismatched shapes, foreign pairs).
    #[error("invalid data: {0}")]
    Data(String),

    /// Data is well formed but the requested model cannot be fitted on it.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("non-finite membrane potential for neuron {neuron} at t = {time_ms} ms")]
    Unstable { time_ms: f64, neuron: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no optimality certificate at lambda = {lambda} after {iterations} iterations (worst KKT violation {worst_violation:e})")]
    Convergence {
        lambda: f64,
        iterations: usize,
        worst_violation: f64,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Wraps an error with the pipeline stage that produced it.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
