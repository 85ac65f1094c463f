use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: input must not be empty")]
    Empty { context: &'static str },

    #[error("invalid argument for {context}: {message}")]
    InvalidArgument {
        context: &'static str,
        message: String,
    },

    #[error("power iteration did not converge after {max_iter} iterations (last estimate {last_estimate})")]
    NonConvergence { max_iter: usize, last_estimate: f64 },

    #[error("degenerate input for {context}: {message}")]
    DegenerateInput {
        context: &'static str,
        message: String,
    },

    #[error("matrix is not positive definite: smallest pivot {pivot} at index {index} (try a positive ridge)")]
    NotPositiveDefinite { pivot: f64, index: usize },

    #[error("optimization diverged at {context}: loss reached {loss}")]
    Diverged { context: &'static str, loss: f64 },

    #[error("optimizer did not reach gradient norm {tol} within {max_iter} iterations (final {achieved}); check not valid")]
    OptimizerNotConverged {
        tol: f64,
        achieved: f64,
        max_iter: usize,
    },

    #[error("file format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
