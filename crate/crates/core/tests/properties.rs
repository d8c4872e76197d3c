use std::f64::consts::TAU;
use std::sync::Arc;

use homoclinic_core::bundles::{transport_frames, transport_frames_from, w1, CircleGrid, Side};
use homoclinic_core::linalg::orthonormalize;
use homoclinic_core::spectral::{
    analytic_kernel_basis, halfline_green_solve, hyperbolic_splitting, kernel_intersection,
};
use homoclinic_core::systems::{
    random_block_family, DirectSum, Paper7Config, Paper7Family, PiecewiseLinearFamily,
    ShiftedChart, SystemFamily,
};
use homoclinic_core::{bundles::stable_frame_at, index_bundle_invariants};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, d * d).prop_map(move |v| DMatrix::from_row_slice(d, d, &v))
}

fn sized_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=4).prop_flat_map(matrix)
}

fn moduli(a: &DMatrix<f64>) -> Vec<f64> {
    a.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

fn gap(a: &DMatrix<f64>) -> f64 {
    moduli(a)
        .iter()
        .map(|m| (m - 1.0).abs())
        .fold(f64::INFINITY, f64::min)
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        0.0
    } else {
        moduli(a).into_iter().fold(0.0, f64::max)
    }
}

/// `t diag(mu) t^-1` with a well-conditioned random `t`.
fn diagonalizable(d: usize, eig: Vec<f64>, t: Vec<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let t = DMatrix::from_row_slice(d, d, &t);
    let svd = t.clone().svd(false, false);
    let s = &svd.singular_values;
    if s.min() < 1e-3 * s.max() || s.max() / s.min() > 50.0 {
        return None;
    }
    let a = &t * DMatrix::from_diagonal(&DVector::from_vec(eig)) * t.clone().try_inverse()?;
    Some((a, t))
}

fn cond(t: &DMatrix<f64>) -> f64 {
    let s = t.clone().svd(false, false).singular_values;
    s.max() / s.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn splittings_are_invariant_and_separate_the_spectrum(a in sized_matrix()) {
        prop_assume!(gap(&a) >= 1e-2 && moduli(&a).iter().all(|&m| m > 1e-2));
        let s = hyperbolic_splitting(&a, 1e-6).unwrap();
        let d = a.nrows();
        prop_assert_eq!(s.dim_stable + s.dim_unstable, d);
        prop_assert_eq!(s.dim_stable, moduli(&a).iter().filter(|&&m| m < 1.0).count());
        let scale = 1e-10 * (1.0 + a.norm());
        let id = DMatrix::<f64>::identity(d, d);
        let qs = &s.stable_frame;
        let qu = &s.unstable_frame;
        prop_assert!(((&id - qs * qs.transpose()) * &a * qs).norm() <= scale);
        prop_assert!(((&id - qu * qu.transpose()) * &a * qu).norm() <= scale);
        prop_assert!((qs.transpose() * qs - DMatrix::identity(s.dim_stable, s.dim_stable)).norm() <= 1e-12);
        prop_assert!(spectral_radius(&s.stable_block()) < 1.0);
        if s.dim_unstable > 0 {
            let inv = s.unstable_block().try_inverse().unwrap();
            prop_assert!(spectral_radius(&inv) < 1.0);
        }
        // complements are orthogonal to their frames
        prop_assert!((s.stable_complement.transpose() * qs).norm() <= 1e-12);
        prop_assert!((s.unstable_complement.transpose() * qu).norm() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn green_function_solves_the_half_line_problem(
        a in sized_matrix(),
        seed in any::<u64>(),
        support in 1usize..=21,
    ) {
        prop_assume!(gap(&a) >= 0.1);
        let d = a.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<DVector<f64>> = (0..support).map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let ymax = y.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let x = halfline_green_solve(&a, &y).unwrap();
        prop_assert_eq!(x.first, 0);
        let mut worst: f64 = 0.0;
        for n in 0..x.last() {
            let yn = if (n as usize) < y.len() { y[n as usize].clone() } else { DVector::zeros(d) };
            let r = x.at(n + 1, d) - &a * x.at(n, d) - yn;
            worst = worst.max(r.amax());
        }
        prop_assert!(worst <= 1e-12 * ymax, "residual {:e}", worst);
        // the truncated tail is negligible
        prop_assert!(x.at(x.last(), d).norm() <= 1e-13 * ymax);
    }
}

fn intersection_case(
) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    (2usize..=4).prop_flat_map(|d| {
        let eig = prop::collection::vec(
            prop_oneof![0.1f64..0.8, 1.3f64..3.0, -0.8f64..-0.1, -3.0f64..-1.3],
            d,
        );
        let t = prop::collection::vec(-1.0f64..1.0, d * d);
        (Just(d), eig.clone(), eig, t.clone(), t, 0..=d)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn intersection_dimension_matches_svd_oracle(case in intersection_case()) {
        let (d, mu_minus, mu_plus, t_minus, t_plus, shared) = case;
        let Some((a_minus, tm)) = diagonalizable(d, mu_minus.clone(), t_minus) else { return Ok(()) };
        // share some unstable directions of a_minus as stable directions of a_plus
        let mut tp = DMatrix::from_row_slice(d, d, &t_plus);
        let mut mu_plus = mu_plus;
        let unstable: Vec<usize> = (0..d).filter(|&i| mu_minus[i].abs() > 1.0).collect();
        for (k, &i) in unstable.iter().take(shared).enumerate() {
            tp.set_column(k, &tm.column(i));
            if mu_plus[k].abs() > 1.0 {
                mu_plus[k] = 1.0 / mu_plus[k];
            }
        }
        let Some((a_plus, tp)) = diagonalizable(d, mu_plus, tp.transpose().as_slice().to_vec()) else { return Ok(()) };

        let plus = hyperbolic_splitting(&a_plus, 1e-6).unwrap();
        let minus = hyperbolic_splitting(&a_minus, 1e-6).unwrap();
        // oracle: null space of the stacked complements by a full SVD
        let rows = plus.stable_complement.ncols() + minus.unstable_complement.ncols();
        let oracle_dim = if rows == 0 {
            d
        } else {
            let mut m = DMatrix::zeros(rows, d);
            let k = plus.stable_complement.ncols();
            m.rows_mut(0, k).copy_from(&plus.stable_complement.transpose());
            m.rows_mut(k, rows - k).copy_from(&minus.unstable_complement.transpose());
            let sv = m.svd(false, false).singular_values;
            let rank = sv.iter().filter(|&&s| s > 1e-6).count();
            prop_assume!(sv.iter().all(|&s| !(1e-10..=1e-6).contains(&s)));
            d - rank
        };
        let basis = kernel_intersection(&plus, &minus);
        prop_assert_eq!(basis.ncols(), oracle_dim);

        let horizon = 30;
        let seqs = analytic_kernel_basis(&a_plus, &a_minus, horizon).unwrap();
        prop_assert_eq!(seqs.len(), oracle_dim);
        let rho = spectral_radius(&plus.stable_block())
            .max(spectral_radius(&minus.unstable_block().try_inverse().unwrap_or_else(|| DMatrix::zeros(0, 0))))
            + 0.05;
        let (cp, cm) = (cond(&tp), cond(&tm));
        for s in &seqs {
            let x0 = s.at(0, d);
            for n in -(horizon as i64)..horizon as i64 {
                let a = if n >= 0 { &a_plus } else { &a_minus };
                let next = s.at(n + 1, d);
                let scale = next.norm().max(s.at(n, d).norm()) * (1.0 + a.norm());
                let r = (next - a * s.at(n, d)).norm();
                prop_assert!(r <= 1e-12 * scale.max(1e-300), "n = {}, residual {:e}, scale {:e}", n, r, scale);
            }
            for n in -(horizon as i64)..=horizon as i64 {
                let c = if n >= 0 { cp } else { cm };
                prop_assert!(s.at(n, d).norm() <= c * x0.norm() * rho.powi(n.abs() as i32) * (1.0 + 1e-9));
            }
        }
    }
}

fn example() -> Arc<dyn SystemFamily> {
    Arc::new(Paper7Family::new(Paper7Config::default()).unwrap())
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()))
}

fn random_rotation(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = orthonormalize(&m);
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

#[test]
fn w1_does_not_depend_on_the_initial_frame() {
    // two copies of the example: a rank-2 stable bundle at +inf
    let sum = DirectSum::new(vec![example(), example()]);
    let grid = CircleGrid::uniform(64).unwrap();
    let f = |t: f64| stable_frame_at(&sum, Side::Plus, t, 1e-6);
    let reference = w1(&transport_frames(f, &grid, &Default::default()).unwrap()).unwrap();
    assert_eq!(reference, 1);
    let single = |t: f64| stable_frame_at(example().as_ref(), Side::Plus, t, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let r = random_rotation(&mut rng, 2);
        let start = f(0.0).unwrap() * &r;
        let tr = transport_frames_from(start, f, &grid, &Default::default()).unwrap();
        assert_eq!(w1(&tr).unwrap(), reference);
        let flip = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let tr = transport_frames_from(
            single(0.0).unwrap() * flip,
            single,
            &grid,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(w1(&tr).unwrap(), -1);
    }
}

#[test]
fn transported_frames_stay_orthonormal_and_refinement_is_stable() {
    let p = example();
    for m in [64, 128, 256] {
        let grid = CircleGrid::uniform(m).unwrap();
        for side in [Side::Plus, Side::Minus] {
            let tr = transport_frames(
                |t| stable_frame_at(p.as_ref(), side, t, 1e-6),
                &grid,
                &Default::default(),
            )
            .unwrap();
            for f in &tr.frames {
                assert!(
                    (f.transpose() * f - DMatrix::identity(f.ncols(), f.ncols())).norm() <= 1e-10
                );
            }
            let expected = if side == Side::Plus { -1 } else { 1 };
            assert_eq!(w1(&tr).unwrap(), expected, "m = {m}");
            // w1 = +1 exactly when det C > 0
            assert_eq!(w1(&tr).unwrap() == 1, tr.closure.determinant() > 0.0);
        }
    }
}

#[test]
fn w1_is_multiplicative_under_direct_sums() {
    let constant: Arc<dyn SystemFamily> = Arc::new(PiecewiseLinearFamily::constant(
        diag(&[0.5, 2.0]),
        diag(&[0.5, 2.0]),
    ));
    let sum = DirectSum::new(vec![example(), constant]);
    let grid = CircleGrid::uniform(64).unwrap();
    let inv = index_bundle_invariants(&sum, &grid, 1e-6, &Default::default()).unwrap();
    assert_eq!(
        (inv.w1_plus, inv.w1_minus, inv.rank_plus, inv.index),
        (-1, 1, 2, 0)
    );

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let fam = random_block_family(&mut rng);
        let inv = index_bundle_invariants(&fam.family, &grid, 1e-6, &Default::default()).unwrap();
        let mut prod_plus = 1;
        let mut prod_minus = 1;
        for part in fam.family.parts() {
            let b =
                index_bundle_invariants(part.as_ref(), &grid, 1e-6, &Default::default()).unwrap();
            prod_plus *= b.w1_plus;
            prod_minus *= b.w1_minus;
        }
        assert_eq!((inv.w1_plus, inv.w1_minus), (prod_plus, prod_minus));
        assert_eq!(
            (inv.w1_plus, inv.w1_minus),
            (fam.w1_plus, fam.w1_minus),
            "{:?}",
            fam.windings
        );
    }
}

#[test]
fn lifted_frames_wind_with_the_closure() {
    let p = example();
    let grid = CircleGrid::uniform(64).unwrap();
    let f = |t: f64| stable_frame_at(p.as_ref(), Side::Plus, t, 1e-6);
    let tr = transport_frames(f, &grid, &Default::default()).unwrap();
    for k in -2i32..=2 {
        let a = tr.frame_at(0.7, f).unwrap();
        let b = tr.frame_at(0.7 + k as f64 * TAU, f).unwrap();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        assert!((a * sign - b).norm() <= 1e-8);
    }
}

fn families() -> Vec<Arc<dyn SystemFamily>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = Paper7Config {
        coupling: 0.5,
        ..Default::default()
    };
    vec![
        example(),
        Arc::new(Paper7Family::new(c).unwrap()),
        Arc::new(ShiftedChart::new(example(), 1.0)),
        Arc::new(DirectSum::new(vec![
            example(),
            Arc::new(random_block_family(&mut rng).family),
        ])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn families_are_periodic_with_a_trivial_solution(
        which in 0usize..4,
        n in -40i64..40,
        theta in 0.0f64..TAU,
        x in prop::collection::vec(-0.5f64..0.5, 8),
    ) {
        let sys = families().swap_remove(which);
        let d = sys.dim();
        let x = DVector::from_column_slice(&x[..d]);
        let zero = DVector::zeros(d);
        prop_assert!(sys.f(n, theta, &zero).amax() == 0.0);
        let fx = sys.f(n, theta, &x);
        prop_assert!((sys.f(n, theta + TAU, &x) - &fx).amax() <= 1e-12);
        prop_assert!((sys.a_plus(theta + TAU) - sys.a_plus(theta)).amax() <= 1e-12);
        let h = 1e-6;
        let mut fd = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = h;
            fd.set_column(j, &((sys.f(n, theta, &(&x + &e)) - sys.f(n, theta, &(&x - &e))) / (2.0 * h)));
        }
        prop_assert!((sys.dfdx(n, theta, &x) - fd).amax() <= 1e-7);
    }
}
