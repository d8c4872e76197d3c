use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SystemFamily;
use crate::error::{Error, Result};

/// Parameters of the built-in two-dimensional family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paper7Config {
    /// Stable eigenvalue, `0 < alpha < 1`.
    pub alpha: f64,
    /// Unstable eigenvalue, `beta > 1`.
    pub beta: f64,
    /// Strength `c >= 0` of the quadratic perturbation.
    #[serde(default)]
    pub coupling: f64,
    /// Width `tau > 0` of the envelope `c / (1 + (n / tau)^2)`.
    #[serde(default = "default_envelope_scale")]
    pub envelope_scale: f64,
}

fn default_envelope_scale() -> f64 {
    5.0
}

impl Default for Paper7Config {
    fn default() -> Self {
        Paper7Config {
            alpha: 0.5,
            beta: 2.0,
            coupling: 0.1,
            envelope_scale: 5.0,
        }
    }
}

impl Paper7Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("must lie in (0, 1), got {}", self.alpha),
            ));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::invalid(
                "beta",
                format!("must be a finite number > 1, got {}", self.beta),
            ));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::invalid(
                "coupling",
                format!("must be finite and >= 0, got {}", self.coupling),
            ));
        }
        if !(self.envelope_scale > 0.0 && self.envelope_scale.is_finite()) {
            return Err(Error::invalid(
                "envelope_scale",
                format!("must be finite and > 0, got {}", self.envelope_scale),
            ));
        }
        Ok(())
    }
}

/// The family `a(theta) = alpha I + (beta - alpha) w w^T`,
/// `w = (sin(theta/2), -cos(theta/2))`, used for `n >= 0` and frozen at
/// `theta = 0` for `n < 0`, plus the perturbation
/// `h_n(x) = c / (1 + (n/tau)^2) * (x1^2 + x2^2, x1 x2)`.
#[derive(Debug, Clone)]
pub struct Paper7Family {
    cfg: Paper7Config,
}

impl Paper7Family {
    pub fn new(cfg: Paper7Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Paper7Family { cfg })
    }

    pub fn config(&self) -> &Paper7Config {
        &self.cfg
    }

    /// `a(e^{i theta})`.
    pub fn matrix(&self, theta: f64) -> DMatrix<f64> {
        let Paper7Config { alpha, beta, .. } = self.cfg;
        let h = 0.5 * theta;
        let off = 0.5 * (alpha - beta) * theta.sin();
        DMatrix::from_row_slice(
            2,
            2,
            &[
                alpha + (beta - alpha) * h.sin().powi(2),
                off,
                off,
                alpha + (beta - alpha) * h.cos().powi(2),
            ],
        )
    }

    fn matrix_derivative(&self, theta: f64) -> DMatrix<f64> {
        let Paper7Config { alpha, beta, .. } = self.cfg;
        let s = 0.5 * (beta - alpha) * theta.sin();
        let off = 0.5 * (alpha - beta) * theta.cos();
        DMatrix::from_row_slice(2, 2, &[s, off, off, -s])
    }

    /// `a_n(e^{i theta})`.
    pub fn coefficient(&self, n: i64, theta: f64) -> DMatrix<f64> {
        if n >= 0 {
            self.matrix(theta)
        } else {
            self.matrix(0.0)
        }
    }

    pub fn envelope(&self, n: i64) -> f64 {
        let r = n as f64 / self.cfg.envelope_scale;
        self.cfg.coupling / (1.0 + r * r)
    }
}

fn quadratic(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1], x[0] * x[1]])
}

impl SystemFamily for Paper7Family {
    fn dim(&self) -> usize {
        2
    }

    fn f(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        let lin = self.coefficient(n, theta) * x;
        if self.cfg.coupling == 0.0 {
            lin
        } else {
            lin + quadratic(x) * self.envelope(n)
        }
    }

    fn dfdx(&self, n: i64, theta: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.coefficient(n, theta);
        let e = self.envelope(n);
        if e != 0.0 {
            j[(0, 0)] += e * 2.0 * x[0];
            j[(0, 1)] += e * 2.0 * x[1];
            j[(1, 0)] += e * x[1];
            j[(1, 1)] += e * x[0];
        }
        j
    }

    fn dfdtheta(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        if n >= 0 {
            self.matrix_derivative(theta) * x
        } else {
            DVector::zeros(2)
        }
    }

    fn a_plus(&self, theta: f64) -> DMatrix<f64> {
        self.matrix(theta)
    }

    fn a_minus(&self, _theta: f64) -> DMatrix<f64> {
        self.matrix(0.0)
    }

    fn is_linear(&self) -> bool {
        self.cfg.coupling == 0.0
    }

    fn name(&self) -> String {
        format!(
            "paper7(alpha={}, beta={}, coupling={}, envelope_scale={})",
            self.cfg.alpha, self.cfg.beta, self.cfg.coupling, self.cfg.envelope_scale
        )
    }
}
