//! Newton correction, branch switching and pseudo-arclength continuation of
//! the nontrivial homoclinic branch.
//!
//! Points of the extended space are flat vectors `(X, theta)` with `theta`
//! last. The parameter is a lifted angle, so branches cross `2 pi` freely.

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::detect::BifurcationCandidate;
use crate::error::{Error, Result};
use crate::truncation::{
    adapt_window, assemble_jacobian, assemble_residual, tail_mass, theta_derivative, JacobianLu,
    ProjectionBoundary, TruncatedProblem, WindowVector, DEFAULT_N_MAX,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Bound on the 2-norm of the full residual, constraint included.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 25,
            max_halvings: 8,
        }
    }
}

/// The extra equation that closes the system.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `theta` is held fixed and only `X` is corrected.
    FixedTheta,
    /// `<normal, (X, theta)> = offset`, with `theta` free.
    Affine { normal: DVector<f64>, offset: f64 },
}

impl Constraint {
    /// `<phi, X> = s`: fixes the amplitude along `phi`.
    pub fn amplitude(phi: &WindowVector, s: f64) -> Self {
        let n = phi.len();
        let mut normal = DVector::zeros(n + 1);
        normal.rows_mut(0, n).copy_from(phi.as_vector());
        Constraint::Affine { normal, offset: s }
    }

    fn value(&self, x: &WindowVector, theta: f64) -> f64 {
        match self {
            Constraint::FixedTheta => 0.0,
            Constraint::Affine { normal, offset } => {
                let n = x.len();
                normal.rows(0, n).dot(x.as_vector()) + normal[n] * theta - offset
            }
        }
    }
}

/// Result of a Newton correction.
#[derive(Debug, Clone)]
pub struct Correction {
    pub problem: TruncatedProblem,
    pub x: WindowVector,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Determinant sign of the (bordered) Jacobian at the solution, `0` when
    /// it is exactly singular.
    pub det_sign: i8,
}

/// `[J g; c^T c_theta]` solved by block elimination with one step of
/// iterative refinement.
struct Bordered {
    lu: JacobianLu,
    jac: crate::truncation::TruncatedJacobian,
    g: DVector<f64>,
    c: DVector<f64>,
    c_theta: f64,
    v: DVector<f64>,
    pivot: f64,
}

impl Bordered {
    fn new(
        jac: crate::truncation::TruncatedJacobian,
        g: DVector<f64>,
        c: DVector<f64>,
        c_theta: f64,
    ) -> Result<Self> {
        let lu = jac.lu();
        let v = lu.solve(&g);
        let pivot = c_theta - c.dot(&v);
        let scale = c_theta.abs() + c.norm() * v.norm();
        if !pivot.is_finite() || pivot.abs() <= 1e-14 * scale || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        Ok(Bordered {
            lu,
            jac,
            g,
            c,
            c_theta,
            v,
            pivot,
        })
    }

    fn solve_once(&self, r: &DVector<f64>, h: f64) -> (DVector<f64>, f64) {
        let w = self.lu.solve(r);
        let t = (h - self.c.dot(&w)) / self.pivot;
        (w - &self.v * t, t)
    }

    fn solve(&self, r: &DVector<f64>, h: f64) -> (DVector<f64>, f64) {
        let (mut x, mut t) = self.solve_once(r, h);
        let r1 = r - (self.jac.mul_vec(&x) + &self.g * t);
        let h1 = h - (self.c.dot(&x) + self.c_theta * t);
        let (dx, dt) = self.solve_once(&r1, h1);
        x += dx;
        t += dt;
        (x, t)
    }

    fn det_sign(&self) -> i8 {
        let s = self.lu.det_sign().unwrap_or(0);
        if self.pivot > 0.0 {
            s
        } else {
            -s
        }
    }
}

fn bordered_at(
    p: &TruncatedProblem,
    x: &WindowVector,
    constraint: &Constraint,
) -> Result<Option<Bordered>> {
    match constraint {
        Constraint::FixedTheta => Ok(None),
        Constraint::Affine { normal, .. } => {
            let n = x.len();
            if normal.len() != n + 1 {
                return Err(Error::SizeMismatch {
                    expected: n + 1,
                    found: normal.len(),
                });
            }
            let jac = assemble_jacobian(p, x)?;
            let g = theta_derivative(p, x)?;
            Ok(Some(Bordered::new(
                jac,
                g,
                normal.rows(0, n).clone_owned(),
                normal[n],
            )?))
        }
    }
}

fn full_norm(
    p: &TruncatedProblem,
    x: &WindowVector,
    constraint: &Constraint,
) -> Result<(f64, f64)> {
    let r = assemble_residual(p, x)?;
    let h = constraint.value(x, p.theta());
    Ok((r.norm(), r.norm().hypot(h)))
}

/// Damped Newton iteration for `G(theta, X) = 0` closed by `constraint`,
/// starting from `guess` at `p.theta()`.
pub fn newton_correct(
    p: &TruncatedProblem,
    guess: &WindowVector,
    constraint: &Constraint,
    opts: &NewtonOptions,
) -> Result<Correction> {
    let mut prob = p.clone();
    let mut x = guess.clone();
    let free = !matches!(constraint, Constraint::FixedTheta);
    let (mut res, mut norm) = full_norm(&prob, &x, constraint)?;
    for iter in 0..=opts.max_iter {
        if norm <= opts.tol {
            let det_sign = match bordered_at(&prob, &x, constraint) {
                Ok(Some(b)) => b.det_sign(),
                Ok(None) => assemble_jacobian(&prob, &x)?.lu().det_sign().unwrap_or(0),
                Err(Error::SingularJacobian) => 0,
                Err(e) => return Err(e),
            };
            return Ok(Correction {
                problem: prob,
                x,
                residual_norm: res,
                iterations: iter,
                det_sign,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let r = assemble_residual(&prob, &x)?;
        let (dx, dtheta) = if free {
            let b = bordered_at(&prob, &x, constraint)?.expect("free theta has a bordered system");
            let (dx, dt) = b.solve(&(-r), -constraint.value(&x, prob.theta()));
            (dx, dt)
        } else {
            let lu = assemble_jacobian(&prob, &x)?.lu();
            if lu.band_lu().min_pivot() == 0.0 {
                return Err(Error::SingularJacobian);
            }
            (lu.solve(&(-r)), 0.0)
        };
        if dx.iter().any(|v| !v.is_finite()) || !dtheta.is_finite() {
            return Err(Error::SingularJacobian);
        }

        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let theta = prob.theta() + lambda * dtheta;
            let trial_p = if free {
                prob.at_theta(theta)?
            } else {
                prob.clone()
            };
            let trial_x =
                WindowVector::from_flat(x.half_window(), x.dim(), x.as_vector() + &dx * lambda)?;
            let (tr, tn) = full_norm(&trial_p, &trial_x, constraint)?;
            if tn < norm {
                prob = trial_p;
                x = trial_x;
                res = tr;
                norm = tn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                residual: norm,
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence {
        residual: norm,
        iterations: opts.max_iter,
    })
}

/// A corrected point of the nontrivial branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    /// Lifted parameter angle.
    pub theta: f64,
    pub x: WindowVector,
    /// `<phi, X>` against the kernel direction of the bifurcation point.
    pub amplitude: f64,
    pub sup_norm: f64,
    pub l2_norm: f64,
    pub residual_norm: f64,
    pub det_sign: i8,
    pub half_window: usize,
    pub newton_iterations: usize,
}

impl BranchPoint {
    fn from_correction(c: Correction, phi: &WindowVector) -> Self {
        let phi = phi.resized(c.x.half_window());
        let sup_norm =
            c.x.indices()
                .map(|n| c.x.block(n).norm())
                .fold(0.0, f64::max);
        BranchPoint {
            theta: c.problem.theta(),
            amplitude: phi.as_vector().dot(c.x.as_vector()),
            sup_norm,
            l2_norm: c.x.norm(),
            residual_norm: c.residual_norm,
            det_sign: c.det_sign,
            half_window: c.x.half_window(),
            newton_iterations: c.iterations,
            x: c.x,
        }
    }

    /// `(X, theta)` as one flat vector.
    pub fn extended(&self) -> DVector<f64> {
        let n = self.x.len();
        let mut v = DVector::zeros(n + 1);
        v.rows_mut(0, n).copy_from(self.x.as_vector());
        v[n] = self.theta;
        v
    }

    /// The point on the window `[-m, m]`, zero padded or cut.
    pub fn resized(&self, m: usize) -> BranchPoint {
        let mut p = self.clone();
        p.x = self.x.resized(m);
        p.half_window = m;
        p
    }
}

fn check_kernel(cand: &BifurcationCandidate, d: usize) -> Result<()> {
    let phi = &cand.kernel_vector;
    if phi.dim() != d {
        return Err(Error::DegenerateKernel(format!(
            "kernel vector has block size {}, system has d = {d}",
            phi.dim()
        )));
    }
    if (phi.norm() - 1.0).abs() > 1e-8 || phi.as_vector().iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateKernel(format!(
            "kernel vector is not a unit vector (norm {})",
            phi.norm()
        )));
    }
    if cand.relative_smin.is_nan() || cand.relative_smin > 1e-6 {
        return Err(Error::DegenerateKernel(format!(
            "linearization at theta = {} is not singular (relative smin {:e})",
            cand.theta_star, cand.relative_smin
        )));
    }
    Ok(())
}

/// First nontrivial point near a bifurcation point: Newton from `s0 phi` at
/// `theta_star` with `theta` free and `<phi, X> = s0`.
pub fn switch_branch(
    boundary: &Arc<ProjectionBoundary>,
    cand: &BifurcationCandidate,
    s0: f64,
    half_window: usize,
    opts: &NewtonOptions,
) -> Result<BranchPoint> {
    if s0 == 0.0 || !s0.is_finite() {
        return Err(Error::invalid(
            "s0",
            "branch switching needs a nonzero finite amplitude",
        ));
    }
    check_kernel(cand, boundary.system().dim())?;
    let phi = cand.kernel_vector.resized(half_window);
    let phi = WindowVector::from_flat(half_window, phi.dim(), phi.as_vector() / phi.norm())?;
    let p = TruncatedProblem::new(boundary.clone(), cand.theta_star, half_window)?;
    let guess = WindowVector::from_flat(half_window, phi.dim(), phi.as_vector() * s0)?;
    let c = newton_correct(&p, &guess, &Constraint::amplitude(&phi, s0), opts)?;
    Ok(BranchPoint::from_correction(c, &cand.kernel_vector))
}

/// Re-corrects a point on another window, keeping its amplitude along its
/// own direction.
pub fn refine_point(
    boundary: &Arc<ProjectionBoundary>,
    point: &BranchPoint,
    reference: &WindowVector,
    half_window: usize,
    opts: &NewtonOptions,
) -> Result<BranchPoint> {
    let p = TruncatedProblem::new(boundary.clone(), point.theta, half_window)?;
    let x = point.x.resized(half_window);
    let c = newton_correct(&p, &x, &self_amplitude(&x), opts)?;
    Ok(BranchPoint::from_correction(c, reference))
}

fn self_amplitude(x: &WindowVector) -> Constraint {
    let norm = x.norm();
    let dir = WindowVector::from_flat(x.half_window(), x.dim(), x.as_vector() / norm)
        .expect("same shape");
    Constraint::amplitude(&dir, norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationControls {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    /// Number of accepted steps after the start point.
    pub max_steps: usize,
    /// Stop once `l2_norm` reaches this value.
    pub amplitude_cap: f64,
    pub tail_tol: f64,
    pub n_max: usize,
    /// Corrections needing at most this many iterations count as easy.
    pub easy_iterations: usize,
    /// Points with a smaller `l2_norm` are rejected as trivial; by default
    /// half the start amplitude.
    pub trivial_floor: Option<f64>,
    pub newton: NewtonOptions,
}

impl Default for ContinuationControls {
    fn default() -> Self {
        ContinuationControls {
            ds0: 1e-3,
            ds_min: 1e-6,
            ds_max: 1e-2,
            max_steps: 200,
            amplitude_cap: 0.5,
            tail_tol: 1e-8,
            n_max: DEFAULT_N_MAX,
            easy_iterations: 3,
            trivial_floor: None,
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AmplitudeCap,
    StepFailure,
    WindowOverflow,
    MaxSteps,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::AmplitudeCap => "amplitude_cap",
            StopReason::StepFailure => "step_failure",
            StopReason::WindowOverflow => "window_overflow",
            StopReason::MaxSteps => "max_steps",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub origin: BifurcationCandidate,
    pub stop_reason: StopReason,
}

/// Null direction of `[J g]` at a start point, normalized and oriented so
/// that the amplitude along `phi` grows.
pub fn initial_tangent(
    boundary: &Arc<ProjectionBoundary>,
    start: &BranchPoint,
    phi: &WindowVector,
) -> Result<DVector<f64>> {
    let p = TruncatedProblem::new(boundary.clone(), start.theta, start.half_window)?;
    let phi = phi.resized(start.half_window);
    let jac = assemble_jacobian(&p, &start.x)?;
    let g = theta_derivative(&p, &start.x)?;
    let b = Bordered::new(jac, g, phi.as_vector().clone(), 0.0)?;
    let (tx, tt) = b.solve(&DVector::zeros(start.x.len()), 1.0);
    let n = tx.len();
    let mut tau = DVector::zeros(n + 1);
    tau.rows_mut(0, n).copy_from(&tx);
    tau[n] = tt;
    let norm = tau.norm();
    tau /= norm;
    if phi.as_vector().dot(&tau.rows(0, n)) < 0.0 {
        tau.neg_mut();
    }
    Ok(tau)
}

/// Pseudo-arclength continuation from `start`, first step along the null
/// tangent.
pub fn continue_branch(
    boundary: &Arc<ProjectionBoundary>,
    origin: &BifurcationCandidate,
    start: BranchPoint,
    controls: &ContinuationControls,
) -> Result<Branch> {
    validate_start(boundary, &start, controls)?;
    let tau = initial_tangent(boundary, &start, &origin.kernel_vector)
        .map_err(|e| Error::StartInvalid(format!("no tangent at the start point: {e}")))?;
    continue_branch_with_tangent(boundary, origin, start, tau, controls)
}

fn validate_start(
    boundary: &Arc<ProjectionBoundary>,
    start: &BranchPoint,
    controls: &ContinuationControls,
) -> Result<()> {
    if start.x.dim() != boundary.system().dim() || start.half_window != start.x.half_window() {
        return Err(Error::StartInvalid(
            "start point does not match the system".into(),
        ));
    }
    if start.residual_norm.is_nan() || start.residual_norm > controls.newton.tol {
        return Err(Error::StartInvalid(format!(
            "start residual {:e} above tolerance",
            start.residual_norm
        )));
    }
    if start.l2_norm == 0.0 {
        return Err(Error::StartInvalid(
            "start point is the trivial solution".into(),
        ));
    }
    if !(controls.ds_min > 0.0
        && controls.ds_min <= controls.ds0
        && controls.ds0 <= controls.ds_max)
    {
        return Err(Error::invalid(
            "continuation",
            "need 0 < ds_min <= ds0 <= ds_max",
        ));
    }
    Ok(())
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

fn resize_extended(v: &DVector<f64>, dim: usize, from: usize, to: usize) -> DVector<f64> {
    let n = dim * (2 * from + 1);
    let x = WindowVector::from_flat(from, dim, v.rows(0, n).clone_owned())
        .expect("consistent size")
        .resized(to);
    let m = x.len();
    let mut out = DVector::zeros(m + 1);
    out.rows_mut(0, m).copy_from(x.as_vector());
    out[m] = v[n];
    out
}

/// Pseudo-arclength continuation along a prescribed first unit tangent
/// `(tau_X, tau_theta)`; later steps use unit secants.
pub fn continue_branch_with_tangent(
    boundary: &Arc<ProjectionBoundary>,
    origin: &BifurcationCandidate,
    start: BranchPoint,
    tangent: DVector<f64>,
    controls: &ContinuationControls,
) -> Result<Branch> {
    validate_start(boundary, &start, controls)?;
    if tangent.len() != start.x.len() + 1 {
        return Err(Error::SizeMismatch {
            expected: start.x.len() + 1,
            found: tangent.len(),
        });
    }
    let d = start.x.dim();
    let floor = controls
        .trivial_floor
        .unwrap_or(0.5 * start.amplitude.abs());
    let mut tau = unit(tangent);
    let mut ds = controls.ds0;
    let mut easy = 0;
    let mut points = vec![start];
    let finish = |points, stop_reason| {
        Ok(Branch {
            points,
            origin: origin.clone(),
            stop_reason,
        })
    };

    if points[0].l2_norm >= controls.amplitude_cap {
        return finish(points, StopReason::AmplitudeCap);
    }
    loop {
        if points.len() > controls.max_steps {
            return finish(points, StopReason::MaxSteps);
        }
        let last = points.last().unwrap();
        let base = last.extended();
        let pred = &base + &tau * ds;
        let n = last.x.len();
        let constraint = Constraint::Affine {
            normal: tau.clone(),
            offset: tau.dot(&base) + ds,
        };
        let attempt =
            TruncatedProblem::new(boundary.clone(), pred[n], last.half_window).and_then(|p| {
                let guess =
                    WindowVector::from_flat(last.half_window, d, pred.rows(0, n).clone_owned())?;
                newton_correct(&p, &guess, &constraint, &controls.newton)
            });
        let corrected = match attempt {
            Ok(c) if c.x.norm() >= floor => c,
            Ok(c) => {
                log::debug!(
                    "rejected trivial point (l2 {:e}) at ds = {ds:e}",
                    c.x.norm()
                );
                ds *= 0.5;
                easy = 0;
                if ds < controls.ds_min {
                    return finish(points, StopReason::StepFailure);
                }
                continue;
            }
            Err(e) => {
                log::debug!("corrector failed at ds = {ds:e}: {e}");
                ds *= 0.5;
                easy = 0;
                if ds < controls.ds_min {
                    return finish(points, StopReason::StepFailure);
                }
                continue;
            }
        };
        let iterations = corrected.iterations;
        let mut point = BranchPoint::from_correction(corrected, &origin.kernel_vector);
        let mut prev = base;

        if tail_mass(&point.x, 0.25) > controls.tail_tol {
            let p = TruncatedProblem::new(boundary.clone(), point.theta, point.half_window)?;
            let refresh = |q: &TruncatedProblem, x: WindowVector| {
                newton_correct(q, &x, &self_amplitude(&x), &controls.newton).map(|c| c.x)
            };
            match adapt_window(&p, &point.x, controls.tail_tol, controls.n_max, refresh) {
                Ok((q, x)) => {
                    let grown = q.half_window();
                    log::info!(
                        "window grown from {} to {grown} at theta = {}",
                        point.half_window,
                        point.theta
                    );
                    let mut padded = point.resized(grown);
                    padded.x = x;
                    point = refine_point(
                        boundary,
                        &padded,
                        &origin.kernel_vector,
                        grown,
                        &controls.newton,
                    )?;
                    prev = resize_extended(&prev, d, points.last().unwrap().half_window, grown);
                    for pt in points.iter_mut() {
                        *pt = pt.resized(grown);
                    }
                }
                Err(Error::WindowOverflow { .. }) => {
                    return finish(points, StopReason::WindowOverflow)
                }
                Err(e) => return Err(e),
            }
        }

        tau = unit(point.extended() - prev);
        if iterations <= controls.easy_iterations {
            easy += 1;
            if easy >= 4 {
                ds = (2.0 * ds).min(controls.ds_max);
                easy = 0;
            }
        } else {
            easy = 0;
        }
        let capped = point.l2_norm >= controls.amplitude_cap;
        points.push(point);
        if capped {
            return finish(points, StopReason::AmplitudeCap);
        }
    }
}
