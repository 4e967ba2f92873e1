//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (length mismatch, bad range, empty input).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A step size outside the region where the mean recursion is stable (μλ ≥ 1).
    #[error("step size {mu} outside the stability domain: mu * lambda_max = {product} >= 1")]
    Stability { mu: f64, product: f64 },

    /// η ≥ 2: the mean-square recursion has no finite steady state.
    #[error("mean-square unstable: eta = {eta} >= 2")]
    MeanSquareInstability { eta: f64 },

    /// The first attractor moment (α₁ or β₁) is not strictly positive.
    #[error("degenerate estimator: {what} = {value} must be > 0")]
    DegenerateEstimator { what: &'static str, value: f64 },

    /// A filter tap became non-finite.
    #[error("filter diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    /// The covariance fixed-point iteration failed to settle.
    #[error("fixed-point iteration did not converge after {iterations} iterations (spectral radius estimate {spectral_radius})")]
    NonConvergence { iterations: usize, spectral_radius: f64 },

    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
