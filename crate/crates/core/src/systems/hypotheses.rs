//! Numerical diagnostics for the standing assumptions on a family.
//!
//! None of these checks is a proof. Each one samples the family, reports the
//! numbers it saw and derives a status from fixed thresholds:
//!
//! * A1, equicontinuity of the derivatives on `S^1 x B(0, M)`: the
//!   oscillation modulus `omega(delta)` of `dfdx` and `dfdtheta`, sup over
//!   `n` in the window, at `delta = 1e-1, 1e-2, 1e-3`. Pass when
//!   `omega(1e-3) <= 0.1 omega(1e-1)` (or `omega` vanishes), warn up to
//!   `0.5`, fail above.
//! * A2, asymptotic limits: `|a_n - a(+-inf)|` at `n = N/4, N/2, N`, pass when
//!   the last value is at most `1e-6`, and equal stable dimensions at both
//!   ends on every grid node (failure otherwise).
//! * A3, only the trivial bounded solution of the linearization at
//!   `theta_0`: smallest singular value of the truncated linearization, pass
//!   when at least `1e-6`; Newton runs from small random seeds must return to
//!   zero (warn otherwise).
//! * A4, the same for the autonomous limit systems at every grid node. For
//!   linear limits this is hyperbolicity; for nonlinear ones only seed scans
//!   are possible and the status is at most warn.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::SystemFamily;
use crate::bundles::{CircleGrid, Side};
use crate::continuation::{newton_correct, Constraint, NewtonOptions};
use crate::error::{Error, Result};
use crate::spectral::hyperbolic_splitting;
use crate::truncation::{assemble_jacobian, TruncatedProblem, WindowVector};

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisOptions {
    pub gap_tol: f64,
    /// Base parameter of the A3 check.
    pub theta0: f64,
    pub deltas: Vec<f64>,
    /// Number of base points of the A1 mesh.
    pub mesh_points: usize,
    /// Newton seeds per A3/A4 scan.
    pub seeds: usize,
    /// Radius of the Newton seeds, relative to `M`.
    pub seed_radius: f64,
    pub min_smin: f64,
    pub limit_tol: f64,
    pub seed: u64,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            gap_tol: crate::spectral::DEFAULT_GAP_TOL,
            theta0: 0.0,
            deltas: vec![1e-1, 1e-2, 1e-3],
            mesh_points: 32,
            seeds: 4,
            seed_radius: 1e-2,
            min_smin: 1e-6,
            limit_tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: Status,
    pub summary: String,
    pub evidence: BTreeMap<String, Vec<f64>>,
}

impl AssumptionCheck {
    fn new(name: &str, status: Status, summary: impl Into<String>) -> Self {
        AssumptionCheck {
            name: name.into(),
            status,
            summary: summary.into(),
            evidence: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, values: Vec<f64>) -> Self {
        self.evidence.insert(key.into(), values);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub a1: AssumptionCheck,
    pub a2: AssumptionCheck,
    pub a3: AssumptionCheck,
    pub a4: AssumptionCheck,
}

impl HypothesisReport {
    pub fn checks(&self) -> [&AssumptionCheck; 4] {
        [&self.a1, &self.a2, &self.a3, &self.a4]
    }

    /// Worst status over the four checks.
    pub fn overall(&self) -> Status {
        self.checks().iter().map(|c| c.status).max().unwrap()
    }
}

fn ball_point(rng: &mut StdRng, d: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * radius;
        }
    }
}

fn clamp_to_ball(x: DVector<f64>, radius: f64) -> DVector<f64> {
    let n = x.norm();
    if n > radius {
        x * (radius / n)
    } else {
        x
    }
}

fn check_a1(
    system: &dyn SystemFamily,
    half_window: usize,
    radius: f64,
    opts: &HypothesisOptions,
    rng: &mut StdRng,
) -> AssumptionCheck {
    let d = system.dim();
    let big_n = half_window as i64;
    let bases: Vec<(f64, DVector<f64>)> = (0..opts.mesh_points)
        .map(|_| {
            (
                rng.gen_range(0.0..std::f64::consts::TAU),
                ball_point(rng, d, radius),
            )
        })
        .collect();
    let dirs: Vec<(f64, DVector<f64>)> = (0..opts.mesh_points)
        .map(|_| {
            let v = DVector::from_fn(d + 1, |_, _| rng.gen_range(-1.0..1.0));
            let v: DVector<f64> = &v / v.norm();
            (v[0], v.rows(1, d).clone_owned())
        })
        .collect();
    let mut omega_x = Vec::new();
    let mut omega_t = Vec::new();
    for &delta in &opts.deltas {
        let (mut wx, mut wt) = (0.0f64, 0.0f64);
        for ((t, x), (dt, dx)) in bases.iter().zip(&dirs) {
            let t2 = t + delta * dt;
            let x2 = clamp_to_ball(x + dx * delta, radius);
            for n in -big_n..=big_n {
                wx = wx.max((system.dfdx(n, t2, &x2) - system.dfdx(n, *t, x)).norm());
                wt = wt.max((system.dfdtheta(n, t2, &x2) - system.dfdtheta(n, *t, x)).norm());
            }
        }
        omega_x.push(wx);
        omega_t.push(wt);
    }
    let ratio = |w: &[f64]| {
        let (first, last) = (w[0], *w.last().unwrap());
        if first <= 1e-12 {
            0.0
        } else {
            last / first
        }
    };
    let worst = ratio(&omega_x).max(ratio(&omega_t));
    let status = if worst <= 0.1 {
        Status::Pass
    } else if worst <= 0.5 {
        Status::Warn
    } else {
        Status::Fail
    };
    AssumptionCheck::new(
        "A1",
        status,
        format!("derivative oscillation shrinks by a factor {worst:.3e} over the delta range"),
    )
    .with("delta", opts.deltas.clone())
    .with("omega_dfdx", omega_x)
    .with("omega_dfdtheta", omega_t)
}

fn check_a2(
    system: &dyn SystemFamily,
    grid: &CircleGrid,
    half_window: usize,
    opts: &HypothesisOptions,
) -> AssumptionCheck {
    let zero = DVector::zeros(system.dim());
    let sample_n: Vec<usize> = vec![
        (half_window / 4).max(1),
        (half_window / 2).max(1),
        half_window,
    ];
    let mut dev_plus = vec![0.0f64; 3];
    let mut dev_minus = vec![0.0f64; 3];
    let mut ds_plus = Vec::new();
    let mut ds_minus = Vec::new();
    for &t in grid.nodes() {
        let (ap, am) = (system.a_plus(t), system.a_minus(t));
        for (k, &n) in sample_n.iter().enumerate() {
            let n = n as i64;
            dev_plus[k] = dev_plus[k].max((system.dfdx(n, t, &zero) - &ap).norm());
            dev_minus[k] = dev_minus[k].max((system.dfdx(-n, t, &zero) - &am).norm());
        }
        match (
            hyperbolic_splitting(&ap, opts.gap_tol),
            hyperbolic_splitting(&am, opts.gap_tol),
        ) {
            (Ok(p), Ok(m)) => {
                ds_plus.push(p.dim_stable as f64);
                ds_minus.push(m.dim_stable as f64);
            }
            (Err(e), _) | (_, Err(e)) => {
                return AssumptionCheck::new(
                    "A2",
                    Status::Fail,
                    format!("limit matrix at theta = {t} is not hyperbolic: {e}"),
                )
                .with("deviation_plus", dev_plus)
                .with("deviation_minus", dev_minus);
            }
        }
    }
    let mismatch = ds_plus.iter().zip(&ds_minus).position(|(a, b)| a != b);
    let converged = dev_plus[2] <= opts.limit_tol && dev_minus[2] <= opts.limit_tol;
    let (status, summary) = if let Some(i) = mismatch {
        let err = Error::IndexMismatch(format!(
            "d_s(+inf) = {} but d_s(-inf) = {} at theta = {}",
            ds_plus[i],
            ds_minus[i],
            grid.nodes()[i]
        ));
        (Status::Fail, err.to_string())
    } else if !converged {
        (
            Status::Fail,
            format!(
                "a_n is still {:.3e} away from its limits at |n| = N",
                dev_plus[2].max(dev_minus[2])
            ),
        )
    } else {
        (
            Status::Pass,
            "limits reached and stable dimensions agree on the grid".to_string(),
        )
    };
    AssumptionCheck::new("A2", status, summary)
        .with("sample_n", sample_n.iter().map(|&n| n as f64).collect())
        .with("deviation_plus", dev_plus)
        .with("deviation_minus", dev_minus)
        .with("dim_stable_plus", ds_plus)
        .with("dim_stable_minus", ds_minus)
}

/// Problem with projection rows taken directly from the splittings at one
/// parameter value.
fn local_problem(
    system: Arc<dyn SystemFamily>,
    theta: f64,
    half_window: usize,
    gap_tol: f64,
) -> Result<TruncatedProblem> {
    let left = hyperbolic_splitting(&system.a_minus(theta), gap_tol)?
        .unstable_complement
        .transpose();
    let right = hyperbolic_splitting(&system.a_plus(theta), gap_tol)?
        .stable_complement
        .transpose();
    TruncatedProblem::with_rows(system, theta, half_window, left, right)
}

struct Scan {
    smin: f64,
    seed_norms: Vec<f64>,
    stray: usize,
}

fn scan_problem(
    p: &TruncatedProblem,
    radius: f64,
    opts: &HypothesisOptions,
    rng: &mut StdRng,
) -> Result<Scan> {
    let j = assemble_jacobian(p, &p.zero_vector())?;
    let (smin, _) = j.lu().smallest_singular();
    let d = p.dim();
    let newton = NewtonOptions::default();
    let mut seed_norms = Vec::new();
    let mut stray = 0;
    for _ in 0..opts.seeds {
        let guess = WindowVector::from_fn(p.half_window(), d, |_| {
            ball_point(rng, d, opts.seed_radius * radius)
        });
        match newton_correct(p, &guess, &Constraint::FixedTheta, &newton) {
            Ok(c) => {
                let norm = c.x.norm();
                if norm > 1e-8 {
                    stray += 1;
                }
                seed_norms.push(norm);
            }
            Err(_) => {
                stray += 1;
                seed_norms.push(f64::NAN);
            }
        }
    }
    Ok(Scan {
        smin,
        seed_norms,
        stray,
    })
}

fn check_a3(
    system: &Arc<dyn SystemFamily>,
    half_window: usize,
    radius: f64,
    opts: &HypothesisOptions,
    rng: &mut StdRng,
) -> AssumptionCheck {
    let p = match local_problem(system.clone(), opts.theta0, half_window, opts.gap_tol) {
        Ok(p) => p,
        Err(e) => {
            return AssumptionCheck::new(
                "A3",
                Status::Fail,
                format!("no truncated problem at theta_0: {e}"),
            )
        }
    };
    match scan_problem(&p, radius, opts, rng) {
        Ok(s) => {
            let status = if s.smin < opts.min_smin {
                Status::Fail
            } else if s.stray > 0 {
                Status::Warn
            } else {
                Status::Pass
            };
            let summary = format!(
                "smallest singular value {:.3e} at theta_0 = {}; {} of {} seeds left the trivial solution",
                s.smin,
                opts.theta0,
                s.stray,
                s.seed_norms.len()
            );
            AssumptionCheck::new("A3", status, summary)
                .with("smin", vec![s.smin])
                .with("seed_final_norms", s.seed_norms)
        }
        Err(e) => AssumptionCheck::new(
            "A3",
            Status::Fail,
            format!("linearization at theta_0 failed: {e}"),
        ),
    }
}

/// Autonomous limit system `x_{n+1} = f^inf_+-(theta, x_n)` of a family.
pub struct AsymptoticSystem {
    inner: Arc<dyn SystemFamily>,
    side: Side,
}

impl AsymptoticSystem {
    pub fn new(inner: Arc<dyn SystemFamily>, side: Side) -> Self {
        AsymptoticSystem { inner, side }
    }

    fn map(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        match self.side {
            Side::Plus => self.inner.f_inf_plus(theta, x),
            Side::Minus => self.inner.f_inf_minus(theta, x),
        }
    }

    /// Numerical linearity test of the limit map on random samples.
    pub fn looks_linear(&self, rng: &mut impl Rng, radius: f64) -> bool {
        let d = self.inner.dim();
        (0..16).all(|_| {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let x = DVector::from_fn(d, |_, _| rng.gen_range(-radius..radius));
            let y = DVector::from_fn(d, |_, _| rng.gen_range(-radius..radius));
            let s = rng.gen_range(-2.0..2.0);
            let lhs = self.map(t, &(&x * s + &y));
            let rhs = self.map(t, &x) * s + self.map(t, &y);
            (lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm())
        })
    }
}

impl SystemFamily for AsymptoticSystem {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn f(&self, _n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.map(theta, x)
    }

    fn dfdx(&self, _n: i64, theta: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let h = 1e-7;
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = h;
            m.set_column(
                j,
                &((self.map(theta, &(x + &e)) - self.map(theta, &(x - &e))) / (2.0 * h)),
            );
        }
        m
    }

    fn a_plus(&self, theta: f64) -> DMatrix<f64> {
        self.side.matrix(self.inner.as_ref(), theta)
    }

    fn a_minus(&self, theta: f64) -> DMatrix<f64> {
        self.side.matrix(self.inner.as_ref(), theta)
    }

    fn f_inf_plus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.map(theta, x)
    }

    fn f_inf_minus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.map(theta, x)
    }

    fn name(&self) -> String {
        format!("{} at {:?} infinity", self.inner.name(), self.side)
    }
}

fn check_a4(
    system: &Arc<dyn SystemFamily>,
    grid: &CircleGrid,
    half_window: usize,
    radius: f64,
    opts: &HypothesisOptions,
    rng: &mut StdRng,
) -> AssumptionCheck {
    let mut smin = Vec::new();
    let mut linear = true;
    let mut stray = 0;
    for side in [Side::Plus, Side::Minus] {
        let limit = AsymptoticSystem::new(system.clone(), side);
        linear &= limit.looks_linear(rng, radius);
        let limit: Arc<dyn SystemFamily> = Arc::new(limit);
        let mut side_min = f64::INFINITY;
        for &t in grid.nodes() {
            let p = match local_problem(limit.clone(), t, half_window, opts.gap_tol) {
                Ok(p) => p,
                Err(e) => {
                    return AssumptionCheck::new(
                        "A4",
                        Status::Fail,
                        format!("limit system at theta = {t} failed: {e}"),
                    )
                }
            };
            let scan_opts = HypothesisOptions {
                seeds: if linear { 0 } else { opts.seeds },
                ..opts.clone()
            };
            match scan_problem(&p, radius, &scan_opts, rng) {
                Ok(s) => {
                    side_min = side_min.min(s.smin);
                    stray += s.stray;
                }
                Err(e) => {
                    return AssumptionCheck::new(
                        "A4",
                        Status::Fail,
                        format!("limit system at theta = {t} failed: {e}"),
                    )
                }
            }
        }
        smin.push(side_min);
    }
    let worst = smin.iter().copied().fold(f64::INFINITY, f64::min);
    let (status, summary) = if worst < opts.min_smin {
        (
            Status::Fail,
            format!("a truncated limit system is nearly singular (smin {worst:.3e})"),
        )
    } else if linear {
        (
            Status::Pass,
            format!("limit maps are linear and hyperbolic on the grid (smin {worst:.3e})"),
        )
    } else {
        (
            Status::Warn,
            format!(
                "limit maps are nonlinear: only small-seed scans were run, {stray} seed(s) left the trivial solution (smin {worst:.3e})"
            ),
        )
    };
    AssumptionCheck::new("A4", status, summary).with("smin_plus_minus", smin)
}

/// Runs the four diagnostics on the window `[-N, N]` and the ball of radius
/// `M`.
pub fn check_hypotheses(
    system: Arc<dyn SystemFamily>,
    grid: &CircleGrid,
    half_window: usize,
    radius: f64,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    if half_window < 10 {
        return Err(Error::invalid(
            "window_n",
            format!("need N >= 10, got {half_window}"),
        ));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(
            "radius",
            format!("need M > 0, got {radius}"),
        ));
    }
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let a1 = check_a1(system.as_ref(), half_window, radius, opts, &mut rng);
    let a2 = check_a2(system.as_ref(), grid, half_window, opts);
    let a3 = check_a3(&system, half_window, radius, opts, &mut rng);
    let a4 = check_a4(&system, grid, half_window, radius, opts, &mut rng);
    Ok(HypothesisReport { a1, a2, a3, a4 })
}
