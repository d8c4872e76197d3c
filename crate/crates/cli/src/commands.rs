//! The subcommands. Each one writes its results under the output directory
//! and returns them for the caller to summarize.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use homoclinic_core::detect::scan_with_boundary;
use homoclinic_core::systems::{check_hypotheses, HypothesisReport, Status, SystemFamily};
use homoclinic_core::truncation::tail_mass;
use homoclinic_core::{
    continue_branch, index_bundle_invariants, locate_bifurcation, switch_branch,
    BifurcationCandidate, Branch, CircleGrid, Error as CoreError, ParityScan, ProjectionBoundary,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let io = |e| CliError::Io {
        path: dir.join(name).display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), contents).map_err(io)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(dir, name, &text)
}

/// Fixed-width scientific notation with 17 significant digits.
fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn grid(cfg: &RunConfig) -> Result<CircleGrid, CliError> {
    Ok(CircleGrid::uniform(cfg.grid_m)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct BundlesReport {
    pub system: String,
    pub grid_m: usize,
    pub rank_plus: usize,
    pub rank_minus: usize,
    pub index: i64,
    pub w1_plus: i8,
    pub w1_minus: i8,
    pub w1_index: i8,
    pub predicted_bifurcation: bool,
    pub min_alignment_plus: f64,
    pub min_alignment_minus: f64,
}

pub fn bundles(cfg: &RunConfig) -> Result<BundlesReport, CliError> {
    let system = cfg.build_system()?;
    let inv = index_bundle_invariants(
        system.as_ref(),
        &grid(cfg)?,
        cfg.tolerances.gap_tol,
        &cfg.transport_options(),
    )?;
    let report = BundlesReport {
        system: system.name(),
        grid_m: cfg.grid_m,
        rank_plus: inv.rank_plus,
        rank_minus: inv.rank_minus,
        index: inv.index,
        w1_plus: inv.w1_plus,
        w1_minus: inv.w1_minus,
        w1_index: inv.w1_index,
        predicted_bifurcation: inv.w1_plus != inv.w1_minus,
        min_alignment_plus: inv.min_alignment_plus,
        min_alignment_minus: inv.min_alignment_minus,
    };
    write_json(&cfg.out, "bundles.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateSummary {
    pub theta_star: f64,
    pub smin_at_star: f64,
    pub relative_smin: f64,
    pub bracket: (f64, f64),
    pub sign_certified: bool,
}

impl From<&BifurcationCandidate> for CandidateSummary {
    fn from(c: &BifurcationCandidate) -> Self {
        CandidateSummary {
            theta_star: c.theta_star,
            smin_at_star: c.smin_at_star,
            relative_smin: c.relative_smin,
            bracket: c.bracket,
            sign_certified: c.sign_certified,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectReport {
    pub system: String,
    pub window_n: usize,
    pub scan: ParityScan,
    pub candidates: Vec<CandidateSummary>,
}

/// Boundary, scan and located candidates, shared by `detect` and `branch`.
pub struct Detection {
    pub boundary: Arc<ProjectionBoundary>,
    pub scan: ParityScan,
    pub candidates: Vec<BifurcationCandidate>,
}

pub fn run_detection(
    cfg: &RunConfig,
    system: Arc<dyn SystemFamily>,
) -> Result<Detection, CliError> {
    let opts = cfg.detect_options();
    let boundary = Arc::new(ProjectionBoundary::new(
        system,
        &grid(cfg)?,
        opts.gap_tol,
        &opts.transport,
    )?);
    let mut scan = scan_with_boundary(&boundary, cfg.window_n, &opts)?;
    let mut candidates = Vec::new();
    for b in scan.candidates() {
        match locate_bifurcation(&boundary, (b.lo, b.hi), cfg.window_n, &opts) {
            Ok(c) => candidates.push(c),
            // a dip that turns out not to be singular is only worth a warning
            Err(e @ (CoreError::NoSignChange { .. } | CoreError::NoKernel { .. }))
                if b.kind == homoclinic_core::detect::CandidateKind::SminDip =>
            {
                warn!("discarding smin dip in [{}, {}]: {e}", b.lo, b.hi);
                scan.warnings
                    .push(format!("dip in [{}, {}] discarded: {e}", b.lo, b.hi));
            }
            Err(e) => return Err(e.into()),
        }
    }
    info!(
        "loop parity {}, {} candidate(s)",
        scan.loop_parity,
        candidates.len()
    );
    Ok(Detection {
        boundary,
        scan,
        candidates,
    })
}

pub fn detect(cfg: &RunConfig) -> Result<DetectReport, CliError> {
    let system = cfg.build_system()?;
    let name = system.name();
    let det = run_detection(cfg, system)?;
    let mut csv = String::from("theta,det_sign,smin\n");
    for s in &det.scan.nodes {
        writeln!(csv, "{},{},{}", sci(s.theta), s.det_sign, sci(s.smin)).unwrap();
    }
    write_file(&cfg.out, "detect_nodes.csv", &csv)?;
    let report = DetectReport {
        system: name,
        window_n: cfg.window_n,
        candidates: det.candidates.iter().map(CandidateSummary::from).collect(),
        scan: det.scan,
    };
    write_json(&cfg.out, "detect.json", &report)?;
    Ok(report)
}

/// Distance on the circle.
fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub system: String,
    pub points: usize,
    pub stop_reason: String,
    pub theta_star: f64,
    pub s0: f64,
    pub theta_range: (f64, f64),
    pub l2_range: (f64, f64),
    pub max_residual: f64,
    pub max_tail_mass: f64,
    pub final_half_window: usize,
}

pub fn branch(
    cfg: &RunConfig,
    theta_star: Option<f64>,
) -> Result<(BranchSummary, Branch), CliError> {
    let system = cfg.build_system()?;
    if system.is_linear() {
        return Err(CliError::LinearFamily);
    }
    let name = system.name();
    let det = run_detection(cfg, system)?;
    let origin = match theta_star {
        Some(t) => {
            let window = cfg
                .branch
                .theta_window
                .unwrap_or(2.0 * TAU / cfg.grid_m as f64);
            let nearest = det.candidates.iter().min_by(|a, b| {
                circle_distance(a.theta_star, t).total_cmp(&circle_distance(b.theta_star, t))
            });
            match nearest {
                Some(c) if circle_distance(c.theta_star, t) <= window => c.clone(),
                other => {
                    return Err(CliError::NoCandidate {
                        theta: t,
                        nearest: other.map(|c| c.theta_star),
                    })
                }
            }
        }
        None => det
            .candidates
            .first()
            .cloned()
            .ok_or(CliError::NoCandidate {
                theta: f64::NAN,
                nearest: None,
            })?,
    };
    info!("switching branches at theta* = {}", origin.theta_star);
    let newton = cfg.newton_options();
    let start = switch_branch(&det.boundary, &origin, cfg.branch.s0, cfg.window_n, &newton)?;
    let br = continue_branch(&det.boundary, &origin, start, &cfg.continuation_controls())?;
    if br.points.is_empty() {
        return Err(CliError::EmptyBranch);
    }

    let mut csv = String::from("step,theta,l2_norm,sup_norm,amplitude,residual,det_sign,N\n");
    let mut max_tail: f64 = 0.0;
    for (k, p) in br.points.iter().enumerate() {
        max_tail = max_tail.max(tail_mass(&p.x, 0.25));
        writeln!(
            csv,
            "{k},{},{},{},{},{},{},{}",
            sci(p.theta),
            sci(p.l2_norm),
            sci(p.sup_norm),
            sci(p.amplitude),
            sci(p.residual_norm),
            p.det_sign,
            p.half_window
        )
        .unwrap();
    }
    write_file(&cfg.out, "branch.csv", &csv)?;
    let range = |f: &dyn Fn(&homoclinic_core::BranchPoint) -> f64| {
        br.points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    };
    let summary = BranchSummary {
        system: name,
        points: br.points.len(),
        stop_reason: br.stop_reason.to_string(),
        theta_star: origin.theta_star,
        s0: cfg.branch.s0,
        theta_range: range(&|p| p.theta),
        l2_range: range(&|p| p.l2_norm),
        max_residual: range(&|p| p.residual_norm).1,
        max_tail_mass: max_tail,
        final_half_window: br.points.last().unwrap().half_window,
    };
    write_json(&cfg.out, "branch.json", &summary)?;
    Ok((summary, br))
}

pub fn check(cfg: &RunConfig) -> Result<HypothesisReport, CliError> {
    let system = cfg.build_system()?;
    let report = check_hypotheses(
        system,
        &grid(cfg)?,
        cfg.window_n,
        cfg.check.radius,
        &cfg.hypothesis_options(),
    )?;
    write_json(&cfg.out, "check.json", &report)?;
    if report.overall() == Status::Fail {
        let failed: Vec<String> = report
            .checks()
            .iter()
            .filter(|c| c.status == Status::Fail)
            .map(|c| format!("{}: {}", c.name, c.summary))
            .collect();
        return Err(CliError::HypothesisFailed(failed.join("; ")));
    }
    Ok(report)
}
