//! Bifurcation of homoclinic trajectories for nonautonomous difference
//! equations parametrized by a circle.
//!
//! The crate computes the orientation invariants of the asymptotic stable
//! bundles, the parity of the truncated linearization along the parameter
//! loop, and continues the nontrivial homoclinic branch that bifurcates from
//! the trivial one.

pub mod bundles;
pub mod continuation;
pub mod detect;
pub mod error;
pub mod linalg;
pub mod spectral;
pub mod systems;
pub mod truncation;

pub use bundles::{
    index_bundle_invariants, BundleInvariants, CircleGrid, LoopTransport, Side, TransportOptions,
};
pub use continuation::{
    continue_branch, newton_correct, switch_branch, Branch, BranchPoint, Constraint,
    ContinuationControls, NewtonOptions, StopReason,
};
pub use detect::{
    locate_bifurcation, scan_parity, BifurcationCandidate, DetectOptions, ParityScan,
};
pub use error::{Error, Result};
pub use spectral::{hyperbolic_splitting, HyperbolicSplitting, LatticeSequence};
pub use systems::{Paper7Config, Paper7Family, SystemFamily};
pub use truncation::{ProjectionBoundary, TruncatedProblem, WindowVector};
