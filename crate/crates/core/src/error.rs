use thiserror::Error;

use crate::fit2d::FitTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (condition number {condition:.3e})")]
    NotPositiveDefinite { condition: f64 },

    #[error("covariance is not symmetric: entries ({row}, {col}) differ by {gap:.3e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite integrand at x = {point:?}")]
    NonFiniteIntegrand { point: Vec<f64> },

    #[error("quadrature did not reach tolerance {tol:e} within {subdivisions} subdivisions (estimate {estimate})")]
    QuadratureTolerance {
        tol: f64,
        subdivisions: usize,
        estimate: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fit diverged at iteration {iteration}")]
    FitDiverged { iteration: usize, partial: Box<FitTrace> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
