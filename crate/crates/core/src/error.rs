use thiserror::Error;

/// Errors raised by the sampling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot} = {value:e} (regularize the covariance)")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("rank-deficient matrix: |R[{column},{column}]| = {value:e} below threshold {threshold:e}")]
    RankDeficient {
        column: usize,
        value: f64,
        threshold: f64,
    },

    #[error("ill-conditioned operator: min eigenvalue {min:e}, max eigenvalue {max:e}")]
    IllConditioned { min: f64, max: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid neighbor budget: K = {k}, L = {l} with only N = {n} training points")]
    InvalidBudget { k: usize, l: usize, n: usize },

    #[error("local softmax denominator vanished at query (far outside the data support for this delta)")]
    DegenerateDenominator,

    #[error(
        "non-finite particle state at iteration {iteration} (h = {step_size:e}, delta = {delta:e}); \
         the stable step size scales like delta^2 = {:e}",
        delta * delta
    )]
    NonFiniteState {
        iteration: usize,
        step_size: f64,
        delta: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
