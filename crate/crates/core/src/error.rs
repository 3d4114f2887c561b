use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty operator family")]
    EmptyFamily,
    #[error("matrix is not hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not unitary (max deviation {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("eigenvalue {min:e} below the positivity tolerance")]
    NegativeEigenvalue { min: f64 },
    #[error("matrix is singular (min singular value {min_singular:e})")]
    Singular { min_singular: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("collapse produced a state of norm {norm:e}")]
    ZeroCollapseNorm { norm: f64 },
    #[error("{what} did not converge")]
    NonConvergence { what: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular density at history {history}: min singular value {min_singular:e}")]
    SingularDensity { history: String, min_singular: f64 },
    #[error("point is not in the causal future of the base point")]
    NotInFuture,
    #[error("point is not on the surface (distance mismatch {mismatch:e})")]
    OffSurface { mismatch: f64 },
    #[error("surface reaches beyond the lattice: {0}")]
    LatticeHorizon(String),
    #[error("insufficient sample size: {n} < {min}")]
    InsufficientSample { n: usize, min: usize },
    #[error("quadrature budget exceeded: {nodes} nodes > {budget}")]
    QuadratureBudget { nodes: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
