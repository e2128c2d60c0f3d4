use std::path::PathBuf;

use thiserror::Error;

/// A single named-field problem found while validating a model or scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid frame index {index} (model has {frames} frames)")]
    InvalidFrame { index: usize, frames: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("task matrix is singular; use a positive regularization")]
    SingularTask,

    #[error("mass matrix is not positive definite")]
    MassMatrixNotPd,

    #[error("QP Hessian is not positive semidefinite (Cholesky failed after regularization)")]
    NotPsd,

    #[error("invalid QP problem: {0}")]
    InvalidProblem(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {}", format_violations(.violations))]
    Invalid {
        path: String,
        violations: Vec<Violation>,
    },

    #[error("unknown solver `{0}` (valid: osc, projector-osc, qp-mt, qp-md, dcts)")]
    UnknownSolver(String),

    #[error("simulation diverged at t = {t:.4} s: {message}")]
    Diverged { t: f64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
