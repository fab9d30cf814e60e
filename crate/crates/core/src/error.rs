use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or coordinate fell outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid parameters, sizes or options.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs whose shapes or states do not fit together.
    #[error("state error: {0}")]
    State(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("non-finite value encountered at epoch {epoch}: {what}")]
    NonFinite { epoch: usize, what: String },

    #[error("gradient check failed: relative error {rel_err:.3e} exceeds {tol:.1e}")]
    GradientCheck { rel_err: f64, tol: f64 },

    #[error("diverged at iteration {iteration} (loss {loss:.6e})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
