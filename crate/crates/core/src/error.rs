use thiserror::Error;

/// Errors produced by the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("block index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite (lambda_min = {lambda_min:.3e}, lambda_max = {lambda_max:.3e})")]
    NotPositiveDefinite { lambda_min: f64, lambda_max: f64 },
    #[error("matrix is not symmetric (max |A - A^T| = {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },
    #[error("invalid block structure: {0}")]
    InvalidBlocks(String),
    #[error("quadrature/root solve failed to converge: {0}")]
    NonConvergence(String),
    #[error("degenerate constant: {0}")]
    DegenerateConstant(String),
    #[error("robust constants required but not provided")]
    MissingConstants,
    #[error("empty subset")]
    EmptySubset,
    #[error("subset enumeration too large: C(n, h) = {count} exceeds cap {cap}")]
    TooManySubsets { count: u128, cap: u128 },
    #[error("all candidate subsets had singular scatter")]
    SingularAllSubsets,
    #[error("subset scatter is singular")]
    SingularScatter,
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("eigenvalue gap below tolerance between positions {j} and {m}")]
    DegenerateSpectrum { j: usize, m: usize },
    #[error("context is not in null-hypothesis form: ||g(V)||_F = {gv_norm:.3e}")]
    NotNullHypothesis { gv_norm: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
