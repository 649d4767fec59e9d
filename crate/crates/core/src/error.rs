use thiserror::Error;

/// Errors raised by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("cyclic or degenerate transition matrix: I - C is singular")]
    SingularTransition,

    #[error("prior covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("not a valid topological order: edge {from} -> {to} points backwards")]
    InvalidOrder { from: usize, to: usize },

    #[error("degenerate basis update for node {node}: smallest singular value {sigma:e}")]
    DegenerateBasis { node: usize, sigma: f64 },

    #[error("numerical failure in C solver: {0}")]
    SolverNumerical(String),

    #[error("EM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
