//! Hyperbolic linear algebra: stable/unstable splittings, spectral
//! projectors, the half-line Green's function and the explicit kernel of
//! piecewise-constant systems.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ordered_schur, orthonormalize};

/// Default distance of every eigenvalue modulus from 1.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Cosine threshold above which two directions count as the same.
pub const INTERSECTION_TOL: f64 = 1e-8;

/// Orthonormal frames of the stable and unstable subspaces of a hyperbolic
/// matrix, together with frames of their orthogonal complements.
#[derive(Debug, Clone)]
pub struct HyperbolicSplitting {
    pub a: DMatrix<f64>,
    pub stable_frame: DMatrix<f64>,
    pub unstable_frame: DMatrix<f64>,
    /// Orthonormal frame of `E^s(a)^perp`.
    pub stable_complement: DMatrix<f64>,
    /// Orthonormal frame of `E^u(a)^perp`.
    pub unstable_complement: DMatrix<f64>,
    pub dim_stable: usize,
    pub dim_unstable: usize,
    /// `min | |mu| - 1 |` over the spectrum.
    pub gap: f64,
    pub eigenvalues: Vec<Complex<f64>>,
}

impl HyperbolicSplitting {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `Q_s^T a Q_s`, the matrix of `a` restricted to the stable subspace.
    pub fn stable_block(&self) -> DMatrix<f64> {
        self.stable_frame.transpose() * &self.a * &self.stable_frame
    }

    /// `Q_u^T a Q_u`.
    pub fn unstable_block(&self) -> DMatrix<f64> {
        self.unstable_frame.transpose() * &self.a * &self.unstable_frame
    }
}

/// Splits `R^d = E^s(a) + E^u(a)` through two ordered real Schur forms.
pub fn hyperbolic_splitting(a: &DMatrix<f64>, gap_tol: f64) -> Result<HyperbolicSplitting> {
    assert!(a.is_square(), "hyperbolic_splitting needs a square matrix");
    let d = a.nrows();
    let stable = ordered_schur(a, |z| z.norm() < 1.0)?;
    let scale = a.norm().max(f64::MIN_POSITIVE);

    let mut gap = f64::INFINITY;
    for z in &stable.eigenvalues {
        let m = z.norm();
        if m <= 64.0 * f64::EPSILON * scale {
            return Err(Error::Singular { modulus: m });
        }
        if (m - 1.0).abs() < gap_tol {
            return Err(Error::NotHyperbolic {
                modulus: m,
                gap_tol,
            });
        }
        gap = gap.min((m - 1.0).abs());
    }
    let dim_stable = stable.selected;
    let unstable = ordered_schur(a, |z| z.norm() > 1.0)?;
    let dim_unstable = unstable.selected;
    if dim_stable + dim_unstable != d {
        return Err(Error::SchurFailure(format!(
            "inconsistent splitting: {dim_stable} stable + {dim_unstable} unstable != {d}"
        )));
    }
    Ok(HyperbolicSplitting {
        a: a.clone(),
        stable_frame: stable.q.columns(0, dim_stable).clone_owned(),
        stable_complement: stable.q.columns(dim_stable, d - dim_stable).clone_owned(),
        unstable_frame: unstable.q.columns(0, dim_unstable).clone_owned(),
        unstable_complement: unstable
            .q
            .columns(dim_unstable, d - dim_unstable)
            .clone_owned(),
        dim_stable,
        dim_unstable,
        gap: if d == 0 { f64::INFINITY } else { gap },
        eigenvalues: stable.eigenvalues,
    })
}

/// Oblique projectors onto `E^s` along `E^u` and vice versa.
#[derive(Debug, Clone)]
pub struct SpectralProjectors {
    pub stable: DMatrix<f64>,
    pub unstable: DMatrix<f64>,
}

pub fn spectral_projectors(split: &HyperbolicSplitting) -> SpectralProjectors {
    let d = split.dim();
    let ds = split.dim_stable;
    let mut basis = DMatrix::zeros(d, d);
    basis.columns_mut(0, ds).copy_from(&split.stable_frame);
    basis
        .columns_mut(ds, d - ds)
        .copy_from(&split.unstable_frame);
    let inv = basis
        .clone()
        .try_inverse()
        .expect("stable and unstable subspaces of a hyperbolic matrix are complementary");
    let stable = basis.columns(0, ds) * inv.rows(0, ds);
    let unstable = DMatrix::identity(d, d) - &stable;
    SpectralProjectors { stable, unstable }
}

/// A sequence `n -> x_n` on the lattice interval `first .. first + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSequence {
    pub first: i64,
    pub values: Vec<DVector<f64>>,
}

impl LatticeSequence {
    pub fn last(&self) -> i64 {
        self.first + self.values.len() as i64 - 1
    }

    /// Value at `n`, zero outside the stored range.
    pub fn at(&self, n: i64, dim: usize) -> DVector<f64> {
        if n < self.first || n > self.last() {
            DVector::zeros(dim)
        } else {
            self.values[(n - self.first) as usize].clone()
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Solves `x_{n+1} - a x_n = y_n` on `n >= 0` with the bounded right inverse
/// given by convolution with `g(n) = a^{n-1} (1_{n>=1} I - P_u)`.
///
/// The stable part is propagated forward and the unstable part backward in
/// splitting coordinates, so neither direction ever multiplies a growing
/// mode. The result is cut once `|x_n| < 1e-14 max|y|` past the support of
/// `y`.
pub fn halfline_green_solve(a: &DMatrix<f64>, y: &[DVector<f64>]) -> Result<LatticeSequence> {
    let split = hyperbolic_splitting(a, DEFAULT_GAP_TOL)?;
    let d = split.dim();
    let ds = split.dim_stable;
    let du = split.dim_unstable;
    let ymax = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if ymax == 0.0 {
        return Ok(LatticeSequence {
            first: 0,
            values: vec![DVector::zeros(d); y.len().max(1)],
        });
    }

    let mut basis = DMatrix::zeros(d, d);
    basis.columns_mut(0, ds).copy_from(&split.stable_frame);
    basis.columns_mut(ds, du).copy_from(&split.unstable_frame);
    let coords = basis.clone().lu();
    let a_s = split.stable_block();
    let a_u_inv = if du > 0 {
        split
            .unstable_block()
            .try_inverse()
            .ok_or(Error::Singular { modulus: 0.0 })?
    } else {
        DMatrix::zeros(0, 0)
    };

    let len_y = y.len();
    let c: Vec<DVector<f64>> = y
        .iter()
        .map(|v| {
            coords
                .solve(v)
                .expect("hyperbolic splitting basis is invertible")
        })
        .collect();

    // unstable coordinates: u_n = A_u^{-1} (c_u(y_n) + u_{n+1}), zero past the support
    let mut unst = vec![DVector::zeros(du); len_y + 1];
    for n in (0..len_y).rev() {
        let rhs = c[n].rows(ds, du) + &unst[n + 1];
        unst[n] = &a_u_inv * rhs;
    }

    let cutoff = 1e-14 * ymax;
    let mut values = Vec::new();
    let mut sigma = DVector::zeros(ds);
    let mut n = 0;
    loop {
        let u_n = if n <= len_y {
            unst[n].clone()
        } else {
            DVector::zeros(du)
        };
        let x_n = &split.stable_frame * &sigma - &split.unstable_frame * u_n;
        let small = x_n.norm() < cutoff;
        values.push(x_n);
        if n >= len_y && small {
            break;
        }
        let inc = if n < len_y {
            c[n].rows(0, ds).clone_owned()
        } else {
            DVector::zeros(ds)
        };
        sigma = &a_s * sigma + inc;
        n += 1;
        if n > len_y + 100_000 {
            break;
        }
    }
    Ok(LatticeSequence { first: 0, values })
}

/// Orthonormal basis of `E^s(a_plus) ∩ E^u(a_minus)`: the null space of
/// `(I - Q_s Q_s^T) + (I - Q_u Q_u^T)`, whose eigenvalue for a unit vector at
/// angle `phi` from both subspaces is of order `sin^2 phi`.
pub fn kernel_intersection(
    plus: &HyperbolicSplitting,
    minus: &HyperbolicSplitting,
) -> DMatrix<f64> {
    let d = plus.dim();
    let qs = &plus.stable_frame;
    let qu = &minus.unstable_frame;
    if qs.ncols() == 0 || qu.ncols() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let id = DMatrix::<f64>::identity(d, d);
    let p = (&id - qs * qs.transpose()) + (&id - qu * qu.transpose());
    let eig = p.symmetric_eigen();
    let cols: Vec<_> = (0..d)
        .filter(|&i| eig.eigenvalues[i] <= INTERSECTION_TOL)
        .map(|i| eig.eigenvectors.column(i).clone_owned())
        .collect();
    if cols.is_empty() {
        return DMatrix::zeros(d, 0);
    }
    orthonormalize(&DMatrix::from_columns(&cols))
}

/// Kernel of `x_{n+1} = a_n x_n` with `a_n = a_plus` for `n >= 0` and
/// `a_n = a_minus` for `n < 0`, sampled on `[-horizon, horizon]`.
///
/// Each basis vector `v` of the intersection yields `x_n = a_plus^n v`
/// (`n >= 0`) and `x_n = a_minus^n v` (`n <= 0`); powers are taken in the
/// restricted stable/unstable blocks.
pub fn analytic_kernel_basis(
    a_plus: &DMatrix<f64>,
    a_minus: &DMatrix<f64>,
    horizon: usize,
) -> Result<Vec<LatticeSequence>> {
    let plus = hyperbolic_splitting(a_plus, DEFAULT_GAP_TOL)?;
    let minus = hyperbolic_splitting(a_minus, DEFAULT_GAP_TOL)?;
    let basis = kernel_intersection(&plus, &minus);
    let n = horizon as i64;
    let a_s = plus.stable_block();
    let a_u_inv = if minus.dim_unstable > 0 {
        minus
            .unstable_block()
            .try_inverse()
            .ok_or(Error::Singular { modulus: 0.0 })?
    } else {
        DMatrix::zeros(0, 0)
    };

    let mut out = Vec::with_capacity(basis.ncols());
    for v in basis.column_iter() {
        let v = v.clone_owned();
        let mut forward = Vec::with_capacity(horizon + 1);
        let mut cs = plus.stable_frame.transpose() * &v;
        for _ in 0..=horizon {
            forward.push(&plus.stable_frame * &cs);
            cs = &a_s * cs;
        }
        let mut backward = Vec::with_capacity(horizon);
        let mut cu = minus.unstable_frame.transpose() * &v;
        for _ in 0..horizon {
            cu = &a_u_inv * cu;
            backward.push(&minus.unstable_frame * &cu);
        }
        backward.reverse();
        backward.extend(forward);
        out.push(LatticeSequence {
            first: -n,
            values: backward,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_matrix(theta: f64, alpha: f64, beta: f64) -> DMatrix<f64> {
        let h = theta / 2.0;
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

    #[test]
    fn diagonal_split() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let s = hyperbolic_splitting(&a, DEFAULT_GAP_TOL).unwrap();
        assert_eq!((s.dim_stable, s.dim_unstable), (1, 1));
        assert_relative_eq!(s.stable_frame[(0, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.unstable_frame[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.gap, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_example_at_quarter_turn() {
        let a = DMatrix::from_row_slice(2, 2, &[1.25, -0.75, -0.75, 1.25]);
        assert_relative_eq!(
            a,
            example_matrix(std::f64::consts::FRAC_PI_2, 0.5, 2.0),
            epsilon = 1e-14
        );
        let s = hyperbolic_splitting(&a, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(s.dim_stable, 1);
        let v = s.stable_frame.column(0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!((v[0] * r + v[1] * r).abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_not_hyperbolic() {
        let (c, s) = (
            std::f64::consts::FRAC_PI_4.cos(),
            std::f64::consts::FRAC_PI_4.sin(),
        );
        let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!(matches!(
            hyperbolic_splitting(&a, DEFAULT_GAP_TOL),
            Err(Error::NotHyperbolic { .. })
        ));
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            hyperbolic_splitting(&a, DEFAULT_GAP_TOL),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn projectors_of_diagonal_and_half_turn() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let p = spectral_projectors(&hyperbolic_splitting(&a, DEFAULT_GAP_TOL).unwrap());
        assert_relative_eq!(
            p.stable,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
            epsilon = 1e-14
        );
        assert_eq!(&p.stable + &p.unstable, DMatrix::identity(2, 2));

        let a = example_matrix(std::f64::consts::PI, 0.5, 2.0);
        let p = spectral_projectors(&hyperbolic_splitting(&a, DEFAULT_GAP_TOL).unwrap());
        assert_relative_eq!(
            p.stable,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn oblique_projector_commutes() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, -2.0, 0.0, 3.0, 0.7, 0.0, 0.0, -0.2]);
        let s = hyperbolic_splitting(&a, DEFAULT_GAP_TOL).unwrap();
        let p = spectral_projectors(&s);
        assert!((&a * &p.stable - &p.stable * &a).norm() < 1e-10);
        assert!((&p.stable * &p.stable - &p.stable).norm() < 1e-10);
        assert_eq!(s.dim_stable, 2);
    }

    #[test]
    fn green_solve_scalar_impulse() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let y = vec![DVector::from_element(1, 1.0)];
        let x = halfline_green_solve(&a, &y).unwrap();
        assert_eq!(x.values[0][0], 0.0);
        for n in 1..20 {
            assert_relative_eq!(x.values[n][0], 0.5f64.powi(n as i32 - 1), epsilon = 1e-15);
        }
    }

    #[test]
    fn green_solve_of_zero() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let x = halfline_green_solve(&a, &[DVector::zeros(2), DVector::zeros(2)]).unwrap();
        assert!(x.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn green_solve_unstable_scalar_runs_backward() {
        // x_{n+1} - 2 x_n = delta_{n,3}: bounded solution is -2^{n-4} for n <= 3
        let a = DMatrix::from_element(1, 1, 2.0);
        let mut y = vec![DVector::zeros(1); 4];
        y[3][0] = 1.0;
        let x = halfline_green_solve(&a, &y).unwrap();
        for n in 0..=3 {
            assert_relative_eq!(x.values[n][0], -(2f64.powi(n as i32 - 4)), epsilon = 1e-15);
        }
        assert_eq!(x.values.len(), 5);
    }

    #[test]
    fn kernel_of_example_family_at_half_turn() {
        let alpha: f64 = 0.5;
        let beta: f64 = 2.0;
        let plus = example_matrix(std::f64::consts::PI, alpha, beta);
        let minus = example_matrix(0.0, alpha, beta);
        let k = analytic_kernel_basis(&plus, &minus, 10).unwrap();
        assert_eq!(k.len(), 1);
        let seq = &k[0];
        let scale = seq.at(0, 2)[1];
        assert_relative_eq!(scale.abs(), 1.0, epsilon = 1e-12);
        for n in -10i64..=10 {
            let v = seq.at(n, 2) / scale;
            let expect = if n >= 0 {
                alpha.powi(n as i32)
            } else {
                beta.powi(n as i32)
            };
            assert!(v[0].abs() < 1e-12);
            assert_relative_eq!(v[1], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn transversal_cases_have_no_kernel() {
        let minus = example_matrix(0.0, 0.5, 2.0);
        assert!(analytic_kernel_basis(&minus, &minus, 5).unwrap().is_empty());
        let plus = example_matrix(std::f64::consts::PI - 1e-3, 0.5, 2.0);
        assert!(analytic_kernel_basis(&plus, &minus, 5).unwrap().is_empty());
    }
}
