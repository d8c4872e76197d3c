//! Self-check of the worked example: invariants, parity law, localization,
//! solver oracles, the nonlinear branch and the property suites.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use homoclinic_core::bundles::{stable_frame_at, transport_frames, transport_frames_from, w1};
use homoclinic_core::linalg::orthonormalize;
use homoclinic_core::spectral::halfline_green_solve;
use homoclinic_core::systems::{
    random_block_family, DirectSum, PiecewiseLinearFamily, SystemFamily,
};
use homoclinic_core::truncation::{assemble_jacobian, assemble_residual, tail_mass};
use homoclinic_core::{
    hyperbolic_splitting, index_bundle_invariants, scan_parity, CircleGrid, Paper7Config,
    Paper7Family, ProjectionBoundary, Side, TruncatedProblem, WindowVector,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands;
use crate::config::{RunConfig, SystemConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Outcome = Result<(bool, String), CliError>;

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> Outcome) -> CriterionResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn example(alpha: f64, beta: f64, coupling: f64) -> Arc<dyn SystemFamily> {
    let cfg = Paper7Config {
        alpha,
        beta,
        coupling,
        envelope_scale: 5.0,
    };
    Arc::new(Paper7Family::new(cfg).expect("valid parameters"))
}

fn invariants(cfg: &RunConfig) -> Outcome {
    let sys = example(0.5, 2.0, 0.1);
    let mut notes = Vec::new();
    let mut ok = true;
    for m in [64, 128, 256] {
        let start = Instant::now();
        let inv = index_bundle_invariants(
            sys.as_ref(),
            &CircleGrid::uniform(m)?,
            cfg.tolerances.gap_tol,
            &cfg.transport_options(),
        )?;
        let secs = start.elapsed().as_secs_f64();
        let good = (inv.index, inv.w1_plus, inv.w1_minus, inv.w1_index) == (0, -1, 1, -1);
        ok &= good && (m != 64 || secs < 1.0);
        notes.push(format!(
            "m={m}: index {} w1 ({}, {}) product {} in {secs:.3}s",
            inv.index, inv.w1_plus, inv.w1_minus, inv.w1_index
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn parity_law(cfg: &RunConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut families: Vec<Arc<dyn SystemFamily>> = vec![example(0.5, 2.0, 0.1)];
    for _ in 0..5 {
        families.push(Arc::new(random_block_family(&mut rng).family));
    }
    let grid = CircleGrid::uniform(64)?;
    let opts = cfg.detect_options();
    let mut ok = true;
    let mut notes = Vec::new();
    for sys in families {
        let start = Instant::now();
        let inv = index_bundle_invariants(sys.as_ref(), &grid, opts.gap_tol, &opts.transport)?;
        let scan = scan_parity(sys.clone(), &grid, 40, &opts)?;
        let secs = start.elapsed().as_secs_f64();
        ok &= scan.loop_parity == inv.w1_index && secs < 10.0;
        notes.push(format!(
            "{}: parity {} vs w1 {}",
            sys.name(),
            scan.loop_parity,
            inv.w1_index
        ));
    }
    Ok((ok, notes.join("; ")))
}

/// `x_n = alpha^n e2` for `n >= 0`, `beta^n e2` for `n <= 0`.
fn closed_form_kernel(alpha: f64, beta: f64, half_window: usize) -> WindowVector {
    WindowVector::from_fn(half_window, 2, |n| {
        let s = if n >= 0 {
            alpha.powi(n as i32)
        } else {
            beta.powi(n as i32)
        };
        DVector::from_vec(vec![0.0, s])
    })
}

fn localization(cfg: &RunConfig) -> Outcome {
    let mut c = cfg.clone();
    c.window_n = 40;
    c.grid_m = 64;
    let det = commands::run_detection(&c, example(0.5, 2.0, 0.0))?;
    if det.candidates.len() != 1 {
        return Ok((false, format!("{} candidates", det.candidates.len())));
    }
    let cand = &det.candidates[0];
    let oracle = closed_form_kernel(0.5, 2.0, 40);
    let cos = cand.kernel_vector.as_vector().dot(oracle.as_vector()).abs()
        / oracle.norm()
        / cand.kernel_vector.norm();
    let err = (cand.theta_star - PI).abs();
    Ok((
        err <= 1e-6 && cos >= 1.0 - 1e-8,
        format!("|theta* - pi| = {err:.2e}, 1 - |cos| = {:.2e}", 1.0 - cos),
    ))
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.gen_range(-2.0..2.0))
}

fn green_oracle(cfg: &RunConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let d = rng.gen_range(1..=4);
        let a = random_matrix(&mut rng, d);
        match hyperbolic_splitting(&a, 1e-6) {
            Ok(s) if s.gap >= 0.1 => {}
            _ => continue,
        }
        let y: Vec<DVector<f64>> = (0..=20)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let ymax = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let x = halfline_green_solve(&a, &y)?;
        for n in 0..x.last() {
            let yn = y
                .get(n as usize)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(d));
            worst = worst.max((x.at(n + 1, d) - &a * x.at(n, d) - yn).norm() / ymax);
        }
        done += 1;
    }
    Ok((
        worst <= 1e-12,
        format!("worst relative residual {worst:.2e}"),
    ))
}

fn jacobian_check(cfg: &RunConfig) -> Outcome {
    let boundary = Arc::new(ProjectionBoundary::new(
        example(0.5, 2.0, 0.1),
        &CircleGrid::uniform(64)?,
        cfg.tolerances.gap_tol,
        &cfg.transport_options(),
    )?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5);
    let n = 12;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = TruncatedProblem::new(boundary.clone(), theta, n)?;
        let x = WindowVector::from_fn(n, 2, |_| {
            DVector::from_fn(2, |_, _| rng.gen_range(-0.3..0.3))
        });
        let j = assemble_jacobian(&p, &x)?.to_dense();
        let mut fd = DMatrix::zeros(j.nrows(), j.ncols());
        for k in 0..x.len() {
            let mut e = x.as_vector().clone();
            e[k] += h;
            let plus = assemble_residual(&p, &WindowVector::from_flat(n, 2, e.clone())?)?;
            e[k] -= 2.0 * h;
            let minus = assemble_residual(&p, &WindowVector::from_flat(n, 2, e)?)?;
            fd.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        worst = worst.max((&j - fd).norm() / j.norm());
    }
    Ok((
        worst <= 1e-6,
        format!("worst relative difference {worst:.2e}"),
    ))
}

fn nonlinear_branch(cfg: &RunConfig) -> Outcome {
    let mut c = cfg.clone();
    c.system = SystemConfig::Paper7(Paper7Config {
        alpha: 0.5,
        beta: 2.0,
        coupling: 0.1,
        envelope_scale: 5.0,
    });
    c.out = cfg.out.join("verify");
    let (summary, br) = commands::branch(&c, Some(PI))?;
    let s0 = c.branch.s0;
    let tails_ok = br
        .points
        .iter()
        .all(|p| tail_mass(&p.x, 0.25) <= c.tolerances.tail_tol);
    let smallest = br
        .points
        .iter()
        .map(|p| p.l2_norm)
        .fold(f64::INFINITY, f64::min);
    let ok = summary.points >= 50
        && summary.max_residual <= 1e-9
        && tails_ok
        && summary.l2_range.0 <= 1e-3
        && summary.l2_range.1 >= 1e-1
        && smallest >= 0.5 * s0
        && summary.final_half_window <= 160;
    Ok((
        ok,
        format!(
            "{} points, l2 in [{:.2e}, {:.2e}], max residual {:.2e}, N = {}, stop: {}",
            summary.points,
            summary.l2_range.0,
            summary.l2_range.1,
            summary.max_residual,
            summary.final_half_window,
            summary.stop_reason
        ),
    ))
}

fn rotation(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let mut q = orthonormalize(&DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0)));
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

fn property_suites(cfg: &RunConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7);
    let grid = CircleGrid::uniform(64)?;
    let topts = cfg.transport_options();
    let gap = cfg.tolerances.gap_tol;
    let mut notes = Vec::new();

    let pair = DirectSum::new(vec![example(0.5, 2.0, 0.1), example(0.5, 2.0, 0.1)]);
    let subspace = |t: f64| stable_frame_at(&pair, Side::Plus, t, gap);
    let reference = w1(&transport_frames(subspace, &grid, &topts)?)?;
    let mut rotations_ok = true;
    for _ in 0..20 {
        let start = subspace(0.0)? * rotation(&mut rng, 2);
        rotations_ok &= w1(&transport_frames_from(start, subspace, &grid, &topts)?)? == reference;
    }
    notes.push(format!("rotation invariance: {rotations_ok}"));

    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
    let sum = DirectSum::new(vec![
        example(0.5, 2.0, 0.1),
        Arc::new(PiecewiseLinearFamily::constant(diag.clone(), diag)),
    ]);
    let mut sums_ok = index_bundle_invariants(&sum, &grid, gap, &topts)?.w1_plus == -1;
    for _ in 0..5 {
        let fam = random_block_family(&mut rng);
        let inv = index_bundle_invariants(&fam.family, &grid, gap, &topts)?;
        let (mut p, mut m) = (1, 1);
        for part in fam.family.parts() {
            let b = index_bundle_invariants(part.as_ref(), &grid, gap, &topts)?;
            p *= b.w1_plus;
            m *= b.w1_minus;
        }
        sums_ok &= (inv.w1_plus, inv.w1_minus) == (p, m);
    }
    notes.push(format!("direct sums: {sums_ok}"));

    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 200 {
        let d = rng.gen_range(1..=4);
        let a = random_matrix(&mut rng, d);
        let Ok(s) = hyperbolic_splitting(&a, 1e-2) else {
            continue;
        };
        let id = DMatrix::<f64>::identity(d, d);
        let qs = &s.stable_frame;
        worst = worst.max(((&id - qs * qs.transpose()) * &a * qs).norm() / (1.0 + a.norm()));
        tested += 1;
    }
    let splitting_ok = worst <= 1e-10;
    notes.push(format!("splitting invariance {worst:.1e}"));

    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let mut c = cfg.clone();
        c.system = SystemConfig::Paper7(Paper7Config::default());
        c.out = cfg.out.join("verify").join(format!("determinism_{tag}"));
        commands::detect(&c)?;
        let read = |name: &str| {
            std::fs::read(c.out.join(name)).map_err(|e| CliError::Io {
                path: name.into(),
                source: e,
            })
        };
        runs.push((read("detect.json")?, read("detect_nodes.csv")?));
    }
    let deterministic = runs[0] == runs[1];
    notes.push(format!("deterministic: {deterministic}"));

    Ok((
        rotations_ok && sums_ok && splitting_ok && deterministic,
        notes.join("; "),
    ))
}

/// Runs every criterion; scratch output goes to `<out>/verify`.
pub fn run_all(cfg: &RunConfig) -> Vec<CriterionResult> {
    vec![
        timed(1, "bundle invariants", || invariants(cfg)),
        timed(2, "parity law", || parity_law(cfg)),
        timed(3, "bifurcation localization", || localization(cfg)),
        timed(4, "Green's function oracle", || green_oracle(cfg)),
        timed(5, "Jacobian finite differences", || jacobian_check(cfg)),
        timed(6, "nonlinear branch", || nonlinear_branch(cfg)),
        timed(7, "property suites", || property_suites(cfg)),
    ]
}

/// As [`run_all`], also writing `verify.json`.
pub fn verify(cfg: &RunConfig) -> Result<Vec<CriterionResult>, CliError> {
    let results = run_all(cfg);
    commands::write_file(
        &cfg.out,
        "verify.json",
        &(serde_json::to_string_pretty(&results).unwrap() + "\n"),
    )?;
    Ok(results)
}
