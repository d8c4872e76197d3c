//! Determinant signs of the truncated linearization along the parameter
//! loop, loop parity, localization of singular points and kernel vectors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::bundles::{w1, CircleGrid, TransportOptions};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandedMatrix};
use crate::spectral::DEFAULT_GAP_TOL;
use crate::systems::SystemFamily;
use crate::truncation::{assemble_jacobian, ProjectionBoundary, TruncatedProblem, WindowVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub gap_tol: f64,
    /// Relative threshold `smin < kernel_tol * ||J||_inf` for a singular node.
    pub kernel_tol: f64,
    /// Relative pivot threshold of [`det_sign`].
    pub pivot_tol: f64,
    pub tol_theta: f64,
    pub max_iter: usize,
    /// A node whose `smin` is this many orders of magnitude below the median
    /// is reported as a dip.
    pub dip_orders: f64,
    pub transport: TransportOptions,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            gap_tol: DEFAULT_GAP_TOL,
            kernel_tol: 1e-8,
            pivot_tol: 1e-12,
            tol_theta: 1e-6,
            max_iter: 200,
            dip_orders: 4.0,
            transport: TransportOptions::default(),
        }
    }
}

/// Sign of `det j` from an LU factorization with partial pivoting.
pub fn det_sign(j: &DMatrix<f64>) -> Result<i8> {
    assert!(j.is_square());
    let norm = j
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let threshold = 1e-12 * norm;
    let lu = j.clone().lu();
    let u = lu.u();
    let mut sign: i8 = if lu.p().determinant::<f64>() > 0.0 {
        1
    } else {
        -1
    };
    let mut pivot = f64::INFINITY;
    for k in 0..u.nrows() {
        let v = u[(k, k)];
        pivot = pivot.min(v.abs());
        if v < 0.0 {
            sign = -sign;
        }
    }
    if pivot < threshold || pivot == 0.0 {
        return Err(Error::NumericallySingular { pivot, threshold });
    }
    Ok(sign)
}

/// Unit right singular vector of the smallest singular value of a band
/// matrix, signed so that its largest-magnitude entry is positive (ties go
/// to the lowest index).
pub fn kernel_vector(j: &BandedMatrix, kernel_tol: f64) -> Result<DVector<f64>> {
    kernel_from_lu(&j.lu(), kernel_tol)
}

fn kernel_from_lu(lu: &BandLu, kernel_tol: f64) -> Result<DVector<f64>> {
    let (smin, v) = lu.smallest_singular(200, 1e-14);
    let tol = kernel_tol * lu.norm();
    if smin.is_nan() || smin > tol {
        return Err(Error::NoKernel { smin, tol });
    }
    Ok(normalize_sign(v))
}

fn normalize_sign(mut v: DVector<f64>) -> DVector<f64> {
    let norm = v.norm();
    v /= norm;
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Diagnostics of the truncated linearization at one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSample {
    pub theta: f64,
    /// `+1` or `-1`; `0` for flagged nodes.
    pub det_sign: i8,
    pub smin: f64,
    pub norm: f64,
    pub flagged: bool,
}

struct Evaluation {
    sample: NodeSample,
    lu: BandLu,
}

fn evaluate(
    boundary: &Arc<ProjectionBoundary>,
    theta: f64,
    half_window: usize,
    opts: &DetectOptions,
) -> Result<Evaluation> {
    let p = TruncatedProblem::new(boundary.clone(), theta, half_window)?;
    let j = assemble_jacobian(&p, &p.zero_vector())?;
    let lu = j.lu().band_lu().clone();
    let (smin, _) = lu.smallest_singular(200, 1e-10);
    let norm = lu.norm();
    let singular = smin < opts.kernel_tol * norm || lu.checked_det_sign(opts.pivot_tol).is_err();
    let det_sign = if singular {
        0
    } else {
        lu.det_sign().unwrap_or(0)
    };
    Ok(Evaluation {
        sample: NodeSample {
            theta,
            det_sign,
            smin,
            norm,
            flagged: det_sign == 0,
        },
        lu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    SignChange,
    SminDip,
}

/// Parameter interval expected to contain a singular point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub kind: CandidateKind,
}

/// Determinant signs around the loop.
#[derive(Debug, Clone, Serialize)]
pub struct ParityScan {
    pub grid: CircleGrid,
    pub half_window: usize,
    pub nodes: Vec<NodeSample>,
    pub sign_change_intervals: Vec<(f64, f64)>,
    /// `(-1)^{#sign changes}`.
    pub loop_parity: i8,
    /// `sign det J(theta_0) * sign det J(theta_m)`.
    pub endpoint_parity: i8,
    /// Product of the orientation signs of the two boundary-row loops.
    pub closure_parity: i8,
    pub median_smin: f64,
    /// Nodes whose `smin` lies far below the median.
    pub smin_dips: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ParityScan {
    pub fn det_signs(&self) -> Vec<i8> {
        self.nodes.iter().map(|s| s.det_sign).collect()
    }

    pub fn smin(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.smin).collect()
    }

    /// Sign-change intervals followed by dips that no sign change explains.
    pub fn candidates(&self) -> Vec<Bracket> {
        let mut out: Vec<Bracket> = self
            .sign_change_intervals
            .iter()
            .map(|&(lo, hi)| Bracket {
                lo,
                hi,
                kind: CandidateKind::SignChange,
            })
            .collect();
        let thetas = self.grid.nodes();
        for &t in &self.smin_dips {
            if self
                .sign_change_intervals
                .iter()
                .any(|&(lo, hi)| lo <= t && t <= hi)
            {
                continue;
            }
            let i = thetas.iter().position(|&x| x == t).unwrap();
            let lo = if i == 0 {
                thetas[thetas.len() - 2] - std::f64::consts::TAU
            } else {
                thetas[i - 1]
            };
            let hi = if i + 1 == thetas.len() {
                thetas[1] + std::f64::consts::TAU
            } else {
                thetas[i + 1]
            };
            out.push(Bracket {
                lo,
                hi,
                kind: CandidateKind::SminDip,
            });
        }
        out
    }
}

/// Computes determinant signs and smallest singular values of the truncated
/// linearization on the grid and checks the loop parity two ways.
pub fn scan_parity(
    system: Arc<dyn SystemFamily>,
    grid: &CircleGrid,
    half_window: usize,
    opts: &DetectOptions,
) -> Result<ParityScan> {
    let boundary = Arc::new(ProjectionBoundary::new(
        system,
        grid,
        opts.gap_tol,
        &opts.transport,
    )?);
    scan_with_boundary(&boundary, half_window, opts)
}

/// As [`scan_parity`] with prebuilt boundary rows; scans the union of the
/// grids the boundary transports were refined to.
pub fn scan_with_boundary(
    boundary: &Arc<ProjectionBoundary>,
    half_window: usize,
    opts: &DetectOptions,
) -> Result<ParityScan> {
    let grid = boundary.grid();
    let nodes: Vec<NodeSample> = grid
        .nodes()
        .par_iter()
        .map(|&t| evaluate(boundary, t, half_window, opts).map(|e| e.sample))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut intervals = Vec::new();
    let mut prev: Option<&NodeSample> = None;
    for s in &nodes {
        if s.flagged {
            continue;
        }
        if let Some(p) = prev {
            if p.det_sign != s.det_sign {
                intervals.push((p.theta, s.theta));
            }
        }
        prev = Some(s);
    }
    let flagged = nodes.iter().filter(|s| s.flagged).count();
    if flagged > 0 {
        warnings.push(format!(
            "{flagged} numerically singular node(s) excluded from the sign count"
        ));
    }

    let (first, last) = (&nodes[0], nodes.last().unwrap());
    if first.flagged || last.flagged {
        let s = if first.flagged { first } else { last };
        return Err(Error::NumericallySingular {
            pivot: s.smin,
            threshold: opts.kernel_tol * s.norm,
        });
    }
    let loop_parity: i8 = if intervals.len() % 2 == 0 { 1 } else { -1 };
    let endpoint_parity = first.det_sign * last.det_sign;
    let closure_parity = w1(boundary.left_transport())? * w1(boundary.right_transport())?;
    if loop_parity != endpoint_parity {
        return Err(Error::InconsistentParity {
            by_count: loop_parity,
            by_endpoints: endpoint_parity,
        });
    }
    if closure_parity != endpoint_parity {
        return Err(Error::InconsistentParity {
            by_count: closure_parity,
            by_endpoints: endpoint_parity,
        });
    }

    let mut sorted: Vec<f64> = nodes.iter().map(|s| s.smin).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_smin = sorted[sorted.len() / 2];
    let cutoff = median_smin * 10f64.powf(-opts.dip_orders);
    let smin_dips: Vec<f64> = nodes
        .iter()
        .filter(|s| s.smin <= cutoff)
        .map(|s| s.theta)
        .collect();
    for &t in &smin_dips {
        if !intervals.iter().any(|&(lo, hi)| lo <= t && t <= hi) {
            warnings.push(format!(
                "smallest singular value dips at theta = {t} without a sign change"
            ));
        }
    }
    Ok(ParityScan {
        grid,
        half_window,
        nodes,
        sign_change_intervals: intervals,
        loop_parity,
        endpoint_parity,
        closure_parity,
        median_smin,
        smin_dips,
        warnings,
    })
}

/// A located singular point of the linearization along the trivial branch.
#[derive(Debug, Clone)]
pub struct BifurcationCandidate {
    pub theta_star: f64,
    pub smin_at_star: f64,
    /// `smin_at_star / ||J||_inf`.
    pub relative_smin: f64,
    pub kernel_vector: WindowVector,
    pub bracket: (f64, f64),
    /// False when located by minimizing `smin` rather than by a sign change.
    pub sign_certified: bool,
}

/// Refines a bracket to a singular point: bisection on the determinant sign,
/// golden-section search on `smin` when both ends have the same sign.
pub fn locate_bifurcation(
    boundary: &Arc<ProjectionBoundary>,
    bracket: (f64, f64),
    half_window: usize,
    opts: &DetectOptions,
) -> Result<BifurcationCandidate> {
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 {
        bracket
    } else {
        (bracket.1, bracket.0)
    };
    let eval = |t: f64| evaluate(boundary, t, half_window, opts);
    let e_lo = eval(lo)?;
    let e_hi = eval(hi)?;
    let d = boundary.system().dim();
    let finish = |t: f64, e: Evaluation, certified: bool| -> Result<BifurcationCandidate> {
        let (smin, v) = e.lu.smallest_singular(200, 1e-14);
        Ok(BifurcationCandidate {
            theta_star: t,
            smin_at_star: smin,
            relative_smin: smin / e.sample.norm,
            kernel_vector: WindowVector::from_flat(half_window, d, normalize_sign(v))?,
            bracket,
            sign_certified: certified,
        })
    };
    if e_lo.sample.flagged {
        return finish(lo, e_lo, true);
    }
    if e_hi.sample.flagged {
        return finish(hi, e_hi, true);
    }

    if e_lo.sample.det_sign != e_hi.sample.det_sign {
        // flagged midpoints end the search; otherwise bisect past tol_theta
        // down to float resolution until smin is small
        let s_lo = e_lo.sample.det_sign;
        let mut best: Option<(f64, Evaluation)> = None;
        let mut iter = 0;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            iter += 1;
            if iter > opts.max_iter {
                return Err(Error::MaxIterations(opts.max_iter));
            }
            let e = eval(mid)?;
            if e.sample.flagged {
                return finish(mid, e, true);
            }
            let sign = e.sample.det_sign;
            if best
                .as_ref()
                .is_none_or(|(_, b)| e.sample.smin < b.sample.smin)
            {
                best = Some((mid, e));
            }
            if sign == s_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (t, e) = best.expect("bracket wider than float resolution");
        let tol = opts.kernel_tol * e.sample.norm;
        if e.sample.smin > tol {
            return Err(Error::NoKernel {
                smin: e.sample.smin,
                tol,
            });
        }
        return finish(t, e, true);
    }

    // golden-section search on smin
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = lo;
    let mut b = hi;
    let mut c = b - g * (b - a);
    let mut dd = a + g * (b - a);
    let mut ec = eval(c)?;
    let mut ed = eval(dd)?;
    let mut iter = 0;
    while b - a > opts.tol_theta {
        iter += 1;
        if iter > opts.max_iter {
            return Err(Error::MaxIterations(opts.max_iter));
        }
        if ec.sample.smin < ed.sample.smin {
            b = dd;
            dd = c;
            ed = ec;
            c = b - g * (b - a);
            ec = eval(c)?;
        } else {
            a = c;
            c = dd;
            ec = ed;
            dd = a + g * (b - a);
            ed = eval(dd)?;
        }
    }
    let (t, e) = if ec.sample.smin < ed.sample.smin {
        (c, ec)
    } else {
        (dd, ed)
    };
    if e.sample.smin > opts.kernel_tol * e.sample.norm {
        return Err(Error::NoSignChange { lo, hi });
    }
    finish(t, e, false)
}
