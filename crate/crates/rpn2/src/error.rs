use thiserror::Error;

/// Errors raised by matrix kernels, component functions and model assembly.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },
    #[error("parameter length mismatch in {context}: expected {expected}, found {found}")]
    ParamLength {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("matrix is singular (pivot magnitude {pivot:e})")]
    Singular { pivot: f64 },
    #[error("{0} requires a square matrix")]
    NotSquare(String),
    #[error("loss must be a 1x1 node, found {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("{0} requires a data batch")]
    MissingData(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: impl Into<String>,
    expected: impl std::fmt::Display,
    found: impl std::fmt::Display,
) -> Error {
    Error::Shape {
        context: context.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
