//! Error type shared across the crate.

/// Errors produced by distribution evaluation, fitting, and diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter fails its validity constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The family has no known parallel-system form for negative theta.
    #[error("no parallel-system characterization for the {0} family")]
    NoParallelForm(&'static str),

    /// The survival function underflowed to zero, so the hazard is infinite.
    #[error("hazard overflow: survival underflowed to zero at y = {0}")]
    InfiniteHazard(f64),

    /// Input data failed validation (shape, sign, rank, or parse problems).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative routine hit its iteration budget without converging.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// A covariance or information matrix is not positive definite.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A likelihood-ratio comparison was requested for non-nested fits.
    #[error("models are not nested: {0}")]
    NotNested(String),
}

pub type Result<T> = std::result::Result<T, Error>;
