//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use homoclinic_core::bundles::{stable_frame_at, transport_frames, transport_frames_from, w1};
use homoclinic_core::linalg::orthonormalize;
use homoclinic_core::spectral::halfline_green_solve;
use homoclinic_core::systems::{
    random_block_family, DirectSum, PiecewiseLinearFamily, SystemFamily,
};
use homoclinic_core::truncation::{assemble_jacobian, assemble_residual, tail_mass};
use homoclinic_core::{
    continue_branch, hyperbolic_splitting, index_bundle_invariants, locate_bifurcation,
    scan_parity, switch_branch, CircleGrid, ContinuationControls, DetectOptions, NewtonOptions,
    Paper7Config, Paper7Family, ProjectionBoundary, Side, TruncatedProblem, WindowVector,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn example(coupling: f64) -> Arc<dyn SystemFamily> {
    Arc::new(
        Paper7Family::new(Paper7Config {
            alpha: 0.5,
            beta: 2.0,
            coupling,
            envelope_scale: 5.0,
        })
        .unwrap(),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Result<(std::process::Output, Duration), String> {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_homoclinic"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HOMOCLINIC_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    if !o.status.success() {
        return Err(format!(
            "{args:?} exited with {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok((o, took))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn bundle_invariants() -> Check {
    let dir = TempDir::new().unwrap();
    let mut notes = Vec::new();
    for m in ["64", "128", "256"] {
        let (_, took) = run_cli(&["bundles", "--grid-m", m], dir.path())?;
        let v = read_json(&dir.path().join("bundles.json"));
        let got = (
            v["index"].as_i64(),
            v["w1_plus"].as_i64(),
            v["w1_minus"].as_i64(),
            v["w1_index"].as_i64(),
        );
        ensure(
            got == (Some(0), Some(-1), Some(1), Some(-1)),
            format!("m = {m}: {got:?}"),
        )?;
        // wall time includes process start-up
        ensure(
            took < Duration::from_secs(1),
            format!("m = {m} took {took:?}"),
        )?;
        notes.push(format!("m={m} {:.0}ms", took.as_secs_f64() * 1e3));
    }
    Ok(format!(
        "index 0, w1 = (-1, +1), w1(Ind) = -1 at {}",
        notes.join(", ")
    ))
}

fn parity_law() -> Check {
    let grid = CircleGrid::uniform(64).unwrap();
    let opts = DetectOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // known products of the block windings serve as the oracle
    let mut cases: Vec<(Arc<dyn SystemFamily>, i8)> = vec![(example(0.1), -1)];
    for _ in 0..5 {
        let fam = random_block_family(&mut rng);
        let expected = fam.w1_plus * fam.w1_minus;
        cases.push((Arc::new(fam.family), expected));
    }
    let mut slowest = Duration::ZERO;
    let mut parities = Vec::new();
    for (sys, expected) in cases {
        let start = Instant::now();
        let inv = index_bundle_invariants(sys.as_ref(), &grid, opts.gap_tol, &opts.transport)
            .map_err(|e| e.to_string())?;
        let scan = scan_parity(sys.clone(), &grid, 40, &opts).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        slowest = slowest.max(took);
        ensure(
            inv.w1_index == expected,
            format!(
                "{}: w1(Ind) {} but windings give {expected}",
                sys.name(),
                inv.w1_index
            ),
        )?;
        ensure(
            scan.loop_parity == inv.w1_index,
            format!(
                "{}: parity {} vs w1 {}",
                sys.name(),
                scan.loop_parity,
                inv.w1_index
            ),
        )?;
        ensure(
            took < Duration::from_secs(10),
            format!("{} took {took:?}", sys.name()),
        )?;
        parities.push(scan.loop_parity);
    }
    Ok(format!(
        "parities {parities:?} match w1(Ind); slowest family {:.0}ms",
        slowest.as_secs_f64() * 1e3
    ))
}

fn localization() -> Check {
    let grid = CircleGrid::uniform(64).unwrap();
    let opts = DetectOptions::default();
    let n = 40;
    let boundary = Arc::new(
        ProjectionBoundary::new(example(0.0), &grid, opts.gap_tol, &opts.transport)
            .map_err(|e| e.to_string())?,
    );
    let scan = homoclinic_core::detect::scan_with_boundary(&boundary, n, &opts)
        .map_err(|e| e.to_string())?;
    let brackets = scan.candidates();
    ensure(
        brackets.len() == 1,
        format!("{} candidates", brackets.len()),
    )?;
    let c = locate_bifurcation(&boundary, (brackets[0].lo, brackets[0].hi), n, &opts)
        .map_err(|e| e.to_string())?;
    let err = (c.theta_star - PI).abs();
    ensure(err <= 1e-6, format!("|theta* - pi| = {err:e}"))?;
    // x_n = alpha^n e2 (n >= 0), beta^n e2 (n < 0)
    let oracle: Vec<f64> = (-(n as i64)..=n as i64)
        .flat_map(|k| {
            [
                0.0,
                if k >= 0 {
                    0.5f64.powi(k as i32)
                } else {
                    2f64.powi(k as i32)
                },
            ]
        })
        .collect();
    let oracle = DVector::from_vec(oracle);
    let v = c.kernel_vector.as_vector();
    let cos = v.dot(&oracle).abs() / (v.norm() * oracle.norm());
    ensure(cos >= 1.0 - 1e-8, format!("1 - |cos| = {:e}", 1.0 - cos))?;
    Ok(format!(
        "theta* - pi = {:.1e}, 1 - |cos| = {:.1e}",
        c.theta_star - PI,
        1.0 - cos
    ))
}

fn green_residual() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    while count < 100 {
        let d = rng.gen_range(1..=4);
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-2.0..2.0));
        let moduli: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        if moduli.iter().any(|m| (m - 1.0).abs() < 0.1) {
            continue;
        }
        let y: Vec<DVector<f64>> = (0..=20)
            .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let ymax = y.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let x = halfline_green_solve(&a, &y).map_err(|e| e.to_string())?;
        ensure(
            x.first == 0 && x.last() >= 20,
            "solution does not cover the support",
        )?;
        for k in 0..x.last() {
            let yk = y
                .get(k as usize)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(d));
            worst = worst.max((x.at(k + 1, d) - &a * x.at(k, d) - yk).amax() / ymax);
        }
        count += 1;
    }
    ensure(worst <= 1e-12, format!("worst relative residual {worst:e}"))?;
    Ok(format!(
        "100 instances, worst relative residual {worst:.1e}"
    ))
}

fn jacobian_fd() -> Check {
    let grid = CircleGrid::uniform(64).unwrap();
    let boundary = Arc::new(
        ProjectionBoundary::new(example(0.1), &grid, 1e-6, &Default::default())
            .map_err(|e| e.to_string())?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let n = 15;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = TruncatedProblem::new(boundary.clone(), theta, n).map_err(|e| e.to_string())?;
        let x = WindowVector::from_fn(n, 2, |k| {
            DVector::from_fn(2, |_, _| {
                rng.gen_range(-1.0..1.0) * 0.8f64.powi(k.abs() as i32)
            })
        });
        let j = assemble_jacobian(&p, &x)
            .map_err(|e| e.to_string())?
            .to_dense();
        let g = |v: DVector<f64>| {
            assemble_residual(&p, &WindowVector::from_flat(n, 2, v).unwrap()).unwrap()
        };
        let mut fd = DMatrix::zeros(j.nrows(), j.ncols());
        for k in 0..x.len() {
            let mut e = DVector::zeros(x.len());
            e[k] = h;
            fd.set_column(
                k,
                &((g(x.as_vector() + &e) - g(x.as_vector() - &e)) / (2.0 * h)),
            );
        }
        worst = worst.max((&j - &fd).norm() / j.norm());
    }
    ensure(
        worst <= 1e-6,
        format!("worst relative difference {worst:e}"),
    )?;
    Ok(format!("50 samples, worst relative difference {worst:.1e}"))
}

fn nonlinear_branch() -> Check {
    let dir = TempDir::new().unwrap();
    let s0 = 5e-4;
    let (_, took) = run_cli(
        &["branch", "--theta-star", "3.14159", "--s0", "5e-4"],
        dir.path(),
    )?;
    ensure(took < Duration::from_secs(60), format!("took {took:?}"))?;
    let csv = std::fs::read_to_string(dir.path().join("branch.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    ensure(rows.len() >= 50, format!("{} points", rows.len()))?;
    let l2: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let lo = l2.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = l2.iter().copied().fold(0.0, f64::max);
    ensure(rows.iter().all(|r| r[5] <= 1e-9), "residual above 1e-9")?;
    ensure(
        lo <= 1e-3 && hi >= 1e-1,
        format!("l2 spans only [{lo:e}, {hi:e}]"),
    )?;
    ensure(lo >= 0.5 * s0, format!("point with l2 {lo:e} below s0 / 2"))?;
    ensure(rows.iter().all(|r| r[7] <= 160.0), "window beyond N = 160")?;

    // same run through the library for the tails, which the CSV does not carry
    let grid = CircleGrid::uniform(64).unwrap();
    let opts = DetectOptions::default();
    let boundary = Arc::new(
        ProjectionBoundary::new(example(0.1), &grid, opts.gap_tol, &opts.transport)
            .map_err(|e| e.to_string())?,
    );
    let scan = homoclinic_core::detect::scan_with_boundary(&boundary, 40, &opts)
        .map_err(|e| e.to_string())?;
    let b = scan.candidates()[0];
    let cand = locate_bifurcation(&boundary, (b.lo, b.hi), 40, &opts).map_err(|e| e.to_string())?;
    let start = switch_branch(&boundary, &cand, s0, 40, &NewtonOptions::default())
        .map_err(|e| e.to_string())?;
    let controls = ContinuationControls::default();
    let br = continue_branch(&boundary, &cand, start, &controls).map_err(|e| e.to_string())?;
    ensure(
        br.points.len() == rows.len(),
        "library and CLI branches differ in length",
    )?;
    let tail = br
        .points
        .iter()
        .map(|p| tail_mass(&p.x, 0.25))
        .fold(0.0, f64::max);
    ensure(tail <= controls.tail_tol, format!("tail mass {tail:e}"))?;
    Ok(format!(
        "{} points, l2 in [{lo:.2e}, {hi:.2e}], max tail {tail:.1e}, {:.0}ms",
        rows.len(),
        took.as_secs_f64() * 1e3
    ))
}

fn rotation(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let mut q = orthonormalize(&DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0)));
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

fn property_suites() -> Check {
    let grid = CircleGrid::uniform(64).unwrap();
    let topts = Default::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    // frame choice, on a rank-2 bundle where rotations are nontrivial
    let pair = DirectSum::new(vec![example(0.1), example(0.1)]);
    let sub = |t: f64| stable_frame_at(&pair, Side::Plus, t, 1e-6);
    let reference = w1(&transport_frames(sub, &grid, &topts).unwrap()).unwrap();
    for _ in 0..20 {
        let start = sub(0.0).unwrap() * rotation(&mut rng, 2);
        let s = w1(&transport_frames_from(start, sub, &grid, &topts).unwrap()).unwrap();
        ensure(s == reference, "w1 changed under a frame rotation")?;
    }

    // direct sums
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
    let sum = DirectSum::new(vec![
        example(0.1),
        Arc::new(PiecewiseLinearFamily::constant(diag.clone(), diag)),
    ]);
    ensure(
        index_bundle_invariants(&sum, &grid, 1e-6, &topts)
            .unwrap()
            .w1_plus
            == -1,
        "example (+) constant",
    )?;
    for _ in 0..10 {
        let fam = random_block_family(&mut rng);
        let inv = index_bundle_invariants(&fam.family, &grid, 1e-6, &topts).unwrap();
        ensure(
            (inv.w1_plus, inv.w1_minus) == (fam.w1_plus, fam.w1_minus),
            format!("windings {:?}", fam.windings),
        )?;
    }

    // splittings
    let mut tested = 0;
    while tested < 200 {
        let d = rng.gen_range(1..=4);
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-2.0..2.0));
        let moduli: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        if moduli.iter().any(|m| (m - 1.0).abs() < 1e-2) {
            continue;
        }
        let s = hyperbolic_splitting(&a, 1e-6).map_err(|e| e.to_string())?;
        ensure(
            s.dim_stable == moduli.iter().filter(|&&m| m < 1.0).count(),
            "stable dimension",
        )?;
        let id = DMatrix::<f64>::identity(d, d);
        for q in [&s.stable_frame, &s.unstable_frame] {
            let leak = ((&id - q * q.transpose()) * &a * q).norm();
            ensure(
                leak <= 1e-10 * (1.0 + a.norm()),
                format!("invariance defect {leak:e}"),
            )?;
        }
        if s.dim_stable > 0 {
            let rho_s = s
                .stable_block()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            ensure(rho_s < 1.0, "stable block not contracting")?;
        }
        if s.dim_unstable > 0 {
            let inv = s.unstable_block().try_inverse().unwrap();
            let rho_u = inv
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            ensure(rho_u < 1.0, "unstable block not expanding")?;
        }
        tested += 1;
    }

    // determinism of the written outputs
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = TempDir::new().unwrap();
        run_cli(&["detect", "--seed", "9"], dir.path())?;
        run_cli(&["branch", "--seed", "9"], dir.path())?;
        let files: Vec<Vec<u8>> = [
            "detect.json",
            "detect_nodes.csv",
            "branch.csv",
            "branch.json",
        ]
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)).unwrap())
        .collect();
        runs.push(files);
    }
    ensure(runs[0] == runs[1], "outputs differ between identical runs")?;
    Ok("20 rotations, 11 direct sums, 200 splittings, byte-identical reruns".to_string())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("bundle invariants", bundle_invariants),
        ("parity law", parity_law),
        ("bifurcation localization", localization),
        ("Green's function oracle", green_residual),
        ("Jacobian finite differences", jacobian_fd),
        ("nonlinear branch", nonlinear_branch),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_string()));
        match res {
            Ok(msg) => println!("criterion {} PASS {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
