//! Run configuration, read from JSON and overridden from the command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use homoclinic_core::continuation::{ContinuationControls, NewtonOptions};
use homoclinic_core::systems::{
    random_block_family, HypothesisOptions, PiecewiseLinearFamily, SystemFamily,
};
use homoclinic_core::{DetectOptions, Paper7Config, Paper7Family, TransportOptions};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "builtin",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum SystemConfig {
    Paper7(Paper7Config),
    /// `x_{n+1} = a_plus x_n` for `n >= 0`, `a_minus x_n` for `n < 0`, for
    /// every `theta`. Matrices are given row by row.
    Constant {
        a_plus: Vec<Vec<f64>>,
        a_minus: Vec<Vec<f64>>,
    },
    /// Block-diagonal rotating saddles drawn from the run seed.
    RandomBlocks,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::Paper7(Paper7Config::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gap_tol: f64,
    pub kernel_tol: f64,
    pub newton_tol: f64,
    pub tail_tol: f64,
    pub tol_theta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gap_tol: 1e-6,
            kernel_tol: 1e-8,
            newton_tol: 1e-10,
            tail_tol: 1e-8,
            tol_theta: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub alignment_floor: f64,
    pub max_refinements: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        let t = TransportOptions::default();
        TransportConfig {
            alignment_floor: t.alignment_floor,
            max_refinements: t.max_refinements,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchConfig {
    /// Amplitude of the first point along the kernel direction.
    pub s0: f64,
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub amplitude_cap: f64,
    pub n_max: usize,
    /// Accepted distance between `--theta-star` and a located candidate;
    /// defaults to two grid spacings.
    pub theta_window: Option<f64>,
}

impl Default for BranchConfig {
    fn default() -> Self {
        let c = ContinuationControls::default();
        BranchConfig {
            s0: 5e-4,
            ds0: c.ds0,
            ds_min: c.ds_min,
            ds_max: c.ds_max,
            max_steps: c.max_steps,
            amplitude_cap: c.amplitude_cap,
            n_max: c.n_max,
            theta_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Radius `M` of the ball the hypotheses are checked on.
    pub radius: f64,
    pub theta0: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            radius: 1.0,
            theta0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub grid_m: usize,
    #[serde(rename = "window_N", alias = "window_n")]
    pub window_n: usize,
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    pub transport: TransportConfig,
    pub branch: BranchConfig,
    pub check: CheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemConfig::default(),
            grid_m: 64,
            window_n: 40,
            tolerances: Tolerances::default(),
            seed: 0,
            out: PathBuf::from("."),
            transport: TransportConfig::default(),
            branch: BranchConfig::default(),
            check: CheckConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {reason}"))
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let d = rows.len();
    if d == 0 {
        return Err(invalid(field, "matrix is empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(invalid(
            &format!("{field}[{i}]"),
            format!("expected {d} entries, found {}", rows[i].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            match path.as_str() {
                "." | "?" => CliError::Config(e.into_inner().to_string()),
                _ => CliError::Config(format!("{path}: {}", e.into_inner())),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.tolerances;
        for (name, v) in [
            ("gap_tol", t.gap_tol),
            ("kernel_tol", t.kernel_tol),
            ("newton_tol", t.newton_tol),
            ("tail_tol", t.tail_tol),
            ("tol_theta", t.tol_theta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(
                    &format!("tolerances.{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if self.grid_m < 8 {
            return Err(invalid(
                "grid_m",
                format!("need at least 8 intervals, got {}", self.grid_m),
            ));
        }
        if self.window_n < 10 {
            return Err(invalid(
                "window_N",
                format!("need at least 10, got {}", self.window_n),
            ));
        }
        let tr = &self.transport;
        if !(tr.alignment_floor > 0.0 && tr.alignment_floor < 1.0) {
            return Err(invalid(
                "transport.alignment_floor",
                format!("must lie in (0, 1), got {}", tr.alignment_floor),
            ));
        }
        let b = &self.branch;
        if !(b.s0 > 0.0 && b.s0.is_finite()) {
            return Err(invalid(
                "branch.s0",
                format!("must be positive, got {}", b.s0),
            ));
        }
        if !(b.ds_min > 0.0 && b.ds_min <= b.ds0 && b.ds0 <= b.ds_max) {
            return Err(invalid("branch.ds0", "need 0 < ds_min <= ds0 <= ds_max"));
        }
        if b.amplitude_cap.is_nan() || b.amplitude_cap <= 0.0 {
            return Err(invalid(
                "branch.amplitude_cap",
                format!("must be positive, got {}", b.amplitude_cap),
            ));
        }
        if b.n_max < self.window_n {
            return Err(invalid(
                "branch.n_max",
                format!("must be at least window_N = {}", self.window_n),
            ));
        }
        if self.check.radius.is_nan() || self.check.radius <= 0.0 {
            return Err(invalid(
                "check.radius",
                format!("must be positive, got {}", self.check.radius),
            ));
        }
        self.build_system().map(|_| ())
    }

    pub fn build_system(&self) -> Result<Arc<dyn SystemFamily>, CliError> {
        match &self.system {
            SystemConfig::Paper7(p) => Paper7Family::new(*p)
                .map(|f| Arc::new(f) as Arc<dyn SystemFamily>)
                .map_err(|e| match e {
                    homoclinic_core::Error::InvalidConfig { field, reason } => {
                        invalid(&format!("system.params.{field}"), reason)
                    }
                    other => CliError::Config(other.to_string()),
                }),
            SystemConfig::Constant { a_plus, a_minus } => {
                let ap = matrix("system.params.a_plus", a_plus)?;
                let am = matrix("system.params.a_minus", a_minus)?;
                if ap.shape() != am.shape() {
                    return Err(invalid(
                        "system.params.a_minus",
                        "must have the shape of a_plus",
                    ));
                }
                Ok(Arc::new(PiecewiseLinearFamily::constant(ap, am)))
            }
            SystemConfig::RandomBlocks => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(Arc::new(random_block_family(&mut rng).family))
            }
        }
    }

    pub fn transport_options(&self) -> TransportOptions {
        TransportOptions {
            alignment_floor: self.transport.alignment_floor,
            max_refinements: self.transport.max_refinements,
        }
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            gap_tol: self.tolerances.gap_tol,
            kernel_tol: self.tolerances.kernel_tol,
            tol_theta: self.tolerances.tol_theta,
            transport: self.transport_options(),
            ..Default::default()
        }
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tolerances.newton_tol,
            ..Default::default()
        }
    }

    pub fn continuation_controls(&self) -> ContinuationControls {
        let b = &self.branch;
        ContinuationControls {
            ds0: b.ds0,
            ds_min: b.ds_min,
            ds_max: b.ds_max,
            max_steps: b.max_steps,
            amplitude_cap: b.amplitude_cap,
            tail_tol: self.tolerances.tail_tol,
            n_max: b.n_max,
            newton: self.newton_options(),
            ..Default::default()
        }
    }

    pub fn hypothesis_options(&self) -> HypothesisOptions {
        HypothesisOptions {
            gap_tol: self.tolerances.gap_tol,
            theta0: self.check.theta0,
            seed: self.seed,
            ..Default::default()
        }
    }
}
