//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operands with incompatible shapes, e.g. `matmul 2x3 . 2x3`.
    #[error("{op}: shape mismatch: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A caller broke an API precondition (not a data-dependent failure).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical failure: non-finite values, non-convergence, singular input.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A metric is undefined on the given data (e.g. AUROC with one class).
    #[error("metric undefined: {0}")]
    Metric(String),

    /// Malformed or corrupt checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape {
            op,
            lhs: format!("{}x{}", lhs.0, lhs.1),
            rhs: format!("{}x{}", rhs.0, rhs.1),
        }
    }

    /// Process exit code for the CLI: 1 for config/usage problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
