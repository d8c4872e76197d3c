use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not hyperbolic: eigenvalue modulus {modulus} is within {gap_tol} of 1")]
    NotHyperbolic { modulus: f64, gap_tol: f64 },
    #[error("matrix is singular (smallest eigenvalue modulus {modulus})")]
    Singular { modulus: f64 },
    #[error("real Schur decomposition failed: {0}")]
    SchurFailure(String),

    #[error("subspace rank changed from {expected} to {found} at theta = {theta}")]
    RankDrop {
        expected: usize,
        found: usize,
        theta: f64,
    },
    #[error("consecutive subspaces at theta in [{lo}, {hi}] are misaligned (cosine {cosine}) after {refinements} refinements")]
    AlignmentFailure {
        lo: f64,
        hi: f64,
        cosine: f64,
        refinements: usize,
    },
    #[error("closure matrix is degenerate: |det C| = {det}")]
    DegenerateClosure { det: f64 },
    #[error("transported frame does not close up: residual {residual}")]
    ClosureMismatch { residual: f64 },
    #[error("stable dimensions disagree: {0}")]
    IndexMismatch(String),

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("window overflow: half-window {half_window} exceeds the limit {limit}")]
    WindowOverflow { half_window: usize, limit: usize },

    #[error("matrix is numerically singular: pivot {pivot} below {threshold}")]
    NumericallySingular { pivot: f64, threshold: f64 },
    #[error(
        "parity computations disagree: sign changes give {by_count}, endpoints give {by_endpoints}"
    )]
    InconsistentParity { by_count: i8, by_endpoints: i8 },
    #[error("no determinant sign change or singular point in [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("iteration limit {0} reached")]
    MaxIterations(usize),
    #[error("smallest singular value {smin} exceeds the kernel tolerance {tol}")]
    NoKernel { smin: f64, tol: f64 },

    #[error(
        "Newton iteration did not converge: residual {residual} after {iterations} iterations"
    )]
    NoConvergence { residual: f64, iterations: usize },
    #[error("Jacobian is singular")]
    SingularJacobian,
    #[error("degenerate kernel direction: {0}")]
    DegenerateKernel(String),
    #[error("invalid start point: {0}")]
    StartInvalid(String),

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
