//! Parametrized families of difference equations `x_{n+1} = f_n(theta, x_n)`
//! over the circle `theta in [0, 2 pi]`.

mod families;
mod hypotheses;
mod paper7;

use nalgebra::{DMatrix, DVector};

pub use families::{
    random_block_family, rotating_saddle, DirectSum, PiecewiseLinearFamily, RandomBlockFamily,
    ShiftedChart,
};
pub use hypotheses::{
    check_hypotheses, AssumptionCheck, AsymptoticSystem, HypothesisOptions, HypothesisReport,
    Status,
};
pub use paper7::{Paper7Config, Paper7Family};

/// Step used by the finite-difference `theta` derivatives.
pub const THETA_STEP: f64 = 1e-6;

/// Evaluation interface of a circle-parametrized family.
///
/// Implementations are pure: every method may be called concurrently and
/// must return the same value for the same arguments. `f(n, theta, 0) = 0`
/// and all maps are `2 pi`-periodic in `theta`.
pub trait SystemFamily: Send + Sync {
    /// State dimension `d`.
    fn dim(&self) -> usize;

    fn f(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64>;

    fn dfdx(&self, n: i64, theta: f64, x: &DVector<f64>) -> DMatrix<f64>;

    /// `d f_n / d theta`; central differences unless overridden.
    fn dfdtheta(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.f(n, theta + THETA_STEP, x) - self.f(n, theta - THETA_STEP, x)) / (2.0 * THETA_STEP)
    }

    /// `a(theta, +inf)`, the limit of `dfdx(n, theta, 0)` as `n -> +inf`.
    fn a_plus(&self, theta: f64) -> DMatrix<f64>;

    /// `a(theta, -inf)`.
    fn a_minus(&self, theta: f64) -> DMatrix<f64>;

    /// Limit map `f^inf_+(theta, x)`; linear unless overridden.
    fn f_inf_plus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.a_plus(theta) * x
    }

    fn f_inf_minus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.a_minus(theta) * x
    }

    /// True when every `f_n(theta, .)` is linear.
    fn is_linear(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        "system".to_string()
    }
}

/// `n -> dfdx(n, theta, 0)`, the linearization along the trivial branch.
pub fn linearization_at_zero(
    system: &dyn SystemFamily,
    theta: f64,
) -> impl Fn(i64) -> DMatrix<f64> + '_ {
    let zero = DVector::zeros(system.dim());
    move |n| system.dfdx(n, theta, &zero)
}
