use homoclinic_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("linear family: no nonlinear branch")]
    LinearFamily,
    #[error("no bifurcation candidate near theta = {theta} (nearest: {nearest:?})")]
    NoCandidate { theta: f64, nearest: Option<f64> },
    #[error("branch has no nontrivial point")]
    EmptyBranch,
    #[error("hypothesis check failed: {0}")]
    HypothesisFailed(String),
    #[error("{failed} of {total} verification criteria failed")]
    VerificationFailed { failed: usize, total: usize },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig { .. } => 2,
                CoreError::NotHyperbolic { .. }
                | CoreError::Singular { .. }
                | CoreError::SchurFailure(_)
                | CoreError::RankDrop { .. }
                | CoreError::IndexMismatch(_) => 3,
                CoreError::AlignmentFailure { .. }
                | CoreError::DegenerateClosure { .. }
                | CoreError::ClosureMismatch { .. }
                | CoreError::NumericallySingular { .. }
                | CoreError::InconsistentParity { .. }
                | CoreError::NoSignChange { .. }
                | CoreError::MaxIterations(_)
                | CoreError::NoKernel { .. } => 4,
                CoreError::SizeMismatch { .. }
                | CoreError::WindowOverflow { .. }
                | CoreError::NoConvergence { .. }
                | CoreError::SingularJacobian
                | CoreError::DegenerateKernel(_)
                | CoreError::StartInvalid(_) => 5,
            },
            CliError::NoCandidate { .. } => 4,
            CliError::LinearFamily | CliError::EmptyBranch => 5,
            CliError::HypothesisFailed(_) => 6,
            CliError::VerificationFailed { .. } => 1,
        }
    }
}
