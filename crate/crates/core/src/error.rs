use thiserror::Error;

/// Which marginal a residual or shape refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Row => f.write_str("row"),
            Axis::Column => f.write_str("column"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("entry {value:e} at ({row}, {col}) is below the positivity floor {floor:e}")]
    NonPositiveEntry {
        row: usize,
        col: usize,
        value: f64,
        floor: f64,
    },

    #[error("{axis} marginal residual {residual:e} exceeds tolerance {tol:e}")]
    MarginalResidual { axis: Axis, residual: f64, tol: f64 },

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error("tangent vector is attached to a different base point")]
    BaseMismatch,

    #[error("matrix is not tangent: {axis} sums reach {residual:e} (tolerance {tol:e})")]
    NotTangent { axis: Axis, residual: f64, tol: f64 },

    #[error(
        "pseudo-inverse of P - X Q^-1 X^T is degenerate: rank {rank} (expected {expected}), \
         condition {condition:e}, smallest retained eigenvalue {smallest:e}"
    )]
    PseudoInverse {
        rank: usize,
        expected: usize,
        condition: f64,
        smallest: f64,
    },

    #[error("Sinkhorn scaling underflowed or overflowed at iteration {iteration}")]
    SinkhornUnderflow { iteration: usize },

    #[error("Sinkhorn-Knopp did not converge in {iterations} iterations (residual {residual:e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
