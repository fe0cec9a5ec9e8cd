use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("coefficient tensor is not SPD at ({x}, {y})")]
    TensorNotSpd { x: f64, y: f64 },

    #[error("incompatible data: source total {source_total:e} vs boundary outflow {outflow:e}")]
    Incompatible { source_total: f64, outflow: f64 },

    #[error("mesh distortion failed at vertex {vertex} after {attempts} redraws")]
    DistortionFailed { vertex: usize, attempts: usize },

    #[error("flux violates the divergence constraint on triangle {triangle} (defect {defect:e})")]
    ConstraintViolated { triangle: usize, defect: f64 },

    #[error("local energy form is not positive: {0:e}")]
    NonPositiveEnergy(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
