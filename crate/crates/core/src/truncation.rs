//! Finite-window discretization of `G(theta, x) = S x - F(theta, x)` on
//! `[-N, N]` with projection boundary conditions.
//!
//! Unknowns are block-interleaved, `x_{-N}, ..., x_N`. Equations are ordered
//! as the `2 N d` interior rows `x_{n+1} - f_n(theta, x_n)` followed by the
//! `d_s` left boundary rows and the `d_u` right boundary rows. Every public
//! vector and dense matrix uses this order; the banded factorization keeps
//! the left rows first internally, an even row permutation, so determinant
//! signs are those of the documented order.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bundles::{transport_frames, CircleGrid, LoopTransport, TransportOptions};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandedMatrix};
use crate::spectral::{hyperbolic_splitting, LatticeSequence};
use crate::systems::SystemFamily;

pub const DEFAULT_N_MAX: usize = 4096;

/// Step of the central difference used for the `theta` derivative of the
/// boundary rows.
const ROW_STEP: f64 = 1e-6;

/// Boundary rows as continuous functions of `theta`: the transposed frames of
/// `E^u(theta, -inf)^perp` and `E^s(theta, +inf)^perp`, carried around the
/// circle from `theta = 0`.
pub struct ProjectionBoundary {
    system: Arc<dyn SystemFamily>,
    gap_tol: f64,
    left: LoopTransport,
    right: LoopTransport,
}

impl std::fmt::Debug for ProjectionBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectionBoundary")
            .field("system", &self.system.name())
            .field("left_rank", &self.left.rank())
            .field("right_rank", &self.right.rank())
            .finish()
    }
}

fn left_subspace(system: &dyn SystemFamily, theta: f64, gap_tol: f64) -> Result<DMatrix<f64>> {
    Ok(hyperbolic_splitting(&system.a_minus(theta), gap_tol)?.unstable_complement)
}

fn right_subspace(system: &dyn SystemFamily, theta: f64, gap_tol: f64) -> Result<DMatrix<f64>> {
    Ok(hyperbolic_splitting(&system.a_plus(theta), gap_tol)?.stable_complement)
}

impl ProjectionBoundary {
    pub fn new(
        system: Arc<dyn SystemFamily>,
        grid: &CircleGrid,
        gap_tol: f64,
        opts: &TransportOptions,
    ) -> Result<Self> {
        let sys = system.as_ref();
        let left = transport_frames(|t| left_subspace(sys, t, gap_tol), grid, opts)?;
        let right = transport_frames(|t| right_subspace(sys, t, gap_tol), grid, opts)?;
        if left.rank() + right.rank() != sys.dim() {
            return Err(Error::IndexMismatch(format!(
                "d_s(-inf) = {} and d_u(+inf) = {} do not add up to d = {}",
                left.rank(),
                right.rank(),
                sys.dim()
            )));
        }
        Ok(ProjectionBoundary {
            system,
            gap_tol,
            left,
            right,
        })
    }

    pub fn system(&self) -> &Arc<dyn SystemFamily> {
        &self.system
    }

    pub fn left_transport(&self) -> &LoopTransport {
        &self.left
    }

    pub fn right_transport(&self) -> &LoopTransport {
        &self.right
    }

    /// `(left_rows, right_rows)` at `theta`, of shapes `d_s x d` and `d_u x d`.
    pub fn rows_at(&self, theta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let sys = self.system.as_ref();
        let l = self
            .left
            .frame_at(theta, |t| left_subspace(sys, t, self.gap_tol))?;
        let r = self
            .right
            .frame_at(theta, |t| right_subspace(sys, t, self.gap_tol))?;
        Ok((l.transpose(), r.transpose()))
    }

    /// Union of the grids the two transports were refined to.
    pub fn grid(&self) -> CircleGrid {
        self.left.grid.merge(&self.right.grid)
    }
}

/// Sequence `x_{-N}, ..., x_N` stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowVector {
    half_window: usize,
    dim: usize,
    data: DVector<f64>,
}

impl WindowVector {
    pub fn zeros(half_window: usize, dim: usize) -> Self {
        WindowVector {
            half_window,
            dim,
            data: DVector::zeros(dim * (2 * half_window + 1)),
        }
    }

    pub fn from_flat(half_window: usize, dim: usize, data: DVector<f64>) -> Result<Self> {
        let expected = dim * (2 * half_window + 1);
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(WindowVector {
            half_window,
            dim,
            data,
        })
    }

    pub fn from_fn(half_window: usize, dim: usize, mut f: impl FnMut(i64) -> DVector<f64>) -> Self {
        let mut w = Self::zeros(half_window, dim);
        for n in w.indices() {
            let v = f(n);
            assert_eq!(v.len(), dim);
            w.block_mut(n).copy_from(&v);
        }
        w
    }

    /// Samples of a lattice sequence on `[-N, N]`, zero where it is not stored.
    pub fn from_lattice(seq: &LatticeSequence, half_window: usize, dim: usize) -> Self {
        Self::from_fn(half_window, dim, |n| seq.at(n, dim))
    }

    pub fn half_window(&self) -> usize {
        self.half_window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        -(self.half_window as i64)..=self.half_window as i64
    }

    fn offset(&self, n: i64) -> usize {
        let k = n + self.half_window as i64;
        assert!(
            k >= 0 && k as usize <= 2 * self.half_window,
            "index {n} outside the window"
        );
        k as usize * self.dim
    }

    pub fn block(&self, n: i64) -> DVector<f64> {
        self.data.rows(self.offset(n), self.dim).clone_owned()
    }

    pub fn block_mut(&mut self, n: i64) -> nalgebra::DVectorViewMut<'_, f64> {
        let o = self.offset(n);
        self.data.rows_mut(o, self.dim)
    }

    /// Euclidean norm of the flat vector, the discrete `l^2` norm.
    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// The same sequence on the window `[-m, m]`, zero padded (`m >= N`) or
    /// cut (`m < N`).
    pub fn resized(&self, m: usize) -> Self {
        let mut out = Self::zeros(m, self.dim);
        let h = self.half_window.min(m) as i64;
        for n in -h..=h {
            out.block_mut(n).copy_from(&self.block(n));
        }
        out
    }
}

/// Where the boundary rows of a problem come from.
#[derive(Clone, Debug)]
enum Rows {
    Fixed,
    Transported(Arc<ProjectionBoundary>),
}

/// The discretized problem at one parameter value.
#[derive(Clone)]
pub struct TruncatedProblem {
    system: Arc<dyn SystemFamily>,
    source: Rows,
    theta: f64,
    half_window: usize,
    left_rows: DMatrix<f64>,
    right_rows: DMatrix<f64>,
}

impl std::fmt::Debug for TruncatedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruncatedProblem")
            .field("system", &self.system.name())
            .field("theta", &self.theta)
            .field("half_window", &self.half_window)
            .field("left_rows", &self.left_rows)
            .field("right_rows", &self.right_rows)
            .finish()
    }
}

impl TruncatedProblem {
    /// Problem with boundary rows taken from the transported frames.
    pub fn new(boundary: Arc<ProjectionBoundary>, theta: f64, half_window: usize) -> Result<Self> {
        let (left_rows, right_rows) = boundary.rows_at(theta)?;
        let system = boundary.system().clone();
        Self::check(system.dim(), half_window, &left_rows, &right_rows)?;
        Ok(TruncatedProblem {
            system,
            source: Rows::Transported(boundary),
            theta,
            half_window,
            left_rows,
            right_rows,
        })
    }

    /// Problem with explicitly given boundary rows, held fixed in `theta`.
    pub fn with_rows(
        system: Arc<dyn SystemFamily>,
        theta: f64,
        half_window: usize,
        left_rows: DMatrix<f64>,
        right_rows: DMatrix<f64>,
    ) -> Result<Self> {
        Self::check(system.dim(), half_window, &left_rows, &right_rows)?;
        Ok(TruncatedProblem {
            system,
            source: Rows::Fixed,
            theta,
            half_window,
            left_rows,
            right_rows,
        })
    }

    fn check(
        d: usize,
        half_window: usize,
        left: &DMatrix<f64>,
        right: &DMatrix<f64>,
    ) -> Result<()> {
        if half_window == 0 {
            return Err(Error::invalid("window_n", "half window must be positive"));
        }
        if left.ncols() != d || right.ncols() != d {
            return Err(Error::SizeMismatch {
                expected: d,
                found: left.ncols().max(right.ncols()),
            });
        }
        if left.nrows() + right.nrows() != d {
            return Err(Error::IndexMismatch(format!(
                "{} left and {} right boundary rows for d = {d}",
                left.nrows(),
                right.nrows()
            )));
        }
        Ok(())
    }

    /// The same problem at another parameter value.
    pub fn at_theta(&self, theta: f64) -> Result<Self> {
        match &self.source {
            Rows::Transported(b) => Self::new(b.clone(), theta, self.half_window),
            Rows::Fixed => {
                let mut p = self.clone();
                p.theta = theta;
                Ok(p)
            }
        }
    }

    /// The same problem on the window `[-m, m]`.
    pub fn with_half_window(&self, m: usize) -> Result<Self> {
        Self::check(self.dim(), m, &self.left_rows, &self.right_rows)?;
        let mut p = self.clone();
        p.half_window = m;
        Ok(p)
    }

    pub fn system(&self) -> &Arc<dyn SystemFamily> {
        &self.system
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn half_window(&self) -> usize {
        self.half_window
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Number of unknowns (and equations), `d (2 N + 1)`.
    pub fn size(&self) -> usize {
        self.dim() * (2 * self.half_window + 1)
    }

    pub fn left_rows(&self) -> &DMatrix<f64> {
        &self.left_rows
    }

    pub fn right_rows(&self) -> &DMatrix<f64> {
        &self.right_rows
    }

    pub fn zero_vector(&self) -> WindowVector {
        WindowVector::zeros(self.half_window, self.dim())
    }

    fn check_vector(&self, x: &WindowVector) -> Result<()> {
        if x.dim() != self.dim() || x.half_window() != self.half_window {
            return Err(Error::SizeMismatch {
                expected: self.size(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `theta` derivative of the boundary rows, zero for fixed rows.
    fn row_derivatives(&self) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
        match &self.source {
            Rows::Fixed => Ok(None),
            Rows::Transported(b) => {
                let (l1, r1) = b.rows_at(self.theta + ROW_STEP)?;
                let (l0, r0) = b.rows_at(self.theta - ROW_STEP)?;
                let h = 2.0 * ROW_STEP;
                Ok(Some(((l1 - l0) / h, (r1 - r0) / h)))
            }
        }
    }
}

/// `G(theta, X)` in the documented row order.
pub fn assemble_residual(p: &TruncatedProblem, x: &WindowVector) -> Result<DVector<f64>> {
    p.check_vector(x)?;
    let d = p.dim();
    let big_n = p.half_window as i64;
    let mut r = DVector::zeros(p.size());
    for (k, n) in (-big_n..big_n).enumerate() {
        let fx = p.system.f(n, p.theta, &x.block(n));
        let row = x.block(n + 1) - fx;
        r.rows_mut(k * d, d).copy_from(&row);
    }
    let base = 2 * p.half_window * d;
    let ds = p.left_rows.nrows();
    r.rows_mut(base, ds)
        .copy_from(&(&p.left_rows * x.block(-big_n)));
    r.rows_mut(base + ds, d - ds)
        .copy_from(&(&p.right_rows * x.block(big_n)));
    Ok(r)
}

/// `d G / d theta` at `(theta, X)` in the documented row order.
pub fn theta_derivative(p: &TruncatedProblem, x: &WindowVector) -> Result<DVector<f64>> {
    p.check_vector(x)?;
    let d = p.dim();
    let big_n = p.half_window as i64;
    let mut g = DVector::zeros(p.size());
    for (k, n) in (-big_n..big_n).enumerate() {
        let col = -p.system.dfdtheta(n, p.theta, &x.block(n));
        g.rows_mut(k * d, d).copy_from(&col);
    }
    if let Some((dl, dr)) = p.row_derivatives()? {
        let base = 2 * p.half_window * d;
        let ds = dl.nrows();
        g.rows_mut(base, ds).copy_from(&(dl * x.block(-big_n)));
        g.rows_mut(base + ds, d - ds)
            .copy_from(&(dr * x.block(big_n)));
    }
    Ok(g)
}

/// `D_X G(theta, X)`, stored banded.
#[derive(Debug, Clone)]
pub struct TruncatedJacobian {
    band: BandedMatrix,
    dim: usize,
    left: usize,
}

impl TruncatedJacobian {
    pub fn size(&self) -> usize {
        self.band.size()
    }

    /// Internal row index of documented row `i`.
    fn internal_row(&self, i: usize) -> usize {
        let interior = self.size() - self.dim;
        if i < interior {
            i + self.left
        } else if i < interior + self.left {
            i - interior
        } else {
            i
        }
    }

    fn rows_to_internal(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(b.len());
        for i in 0..b.len() {
            out[self.internal_row(i)] = b[i];
        }
        out
    }

    fn rows_from_internal(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(b.len(), |i, _| b[self.internal_row(i)])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let inner = self.band.to_dense();
        DMatrix::from_fn(self.size(), self.size(), |i, j| {
            inner[(self.internal_row(i), j)]
        })
    }

    pub fn banded(&self) -> &BandedMatrix {
        &self.band
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.rows_from_internal(&self.band.mul_vec(v))
    }

    /// `J^T v` for `v` in the documented row order.
    pub fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.band.tr_mul_vec(&self.rows_to_internal(v))
    }

    pub fn norm_inf(&self) -> f64 {
        self.band.norm_inf()
    }

    pub fn lu(&self) -> JacobianLu {
        JacobianLu {
            lu: self.band.lu(),
            jac: self.clone(),
        }
    }
}

/// Banded LU of a truncated Jacobian, with solves in the documented order.
#[derive(Debug, Clone)]
pub struct JacobianLu {
    lu: BandLu,
    jac: TruncatedJacobian,
}

impl JacobianLu {
    pub fn band_lu(&self) -> &BandLu {
        &self.lu
    }

    pub fn det_sign(&self) -> Option<i8> {
        self.lu.det_sign()
    }

    pub fn checked_det_sign(&self, rel_tol: f64) -> Result<i8> {
        self.lu.checked_det_sign(rel_tol)
    }

    pub fn norm(&self) -> f64 {
        self.lu.norm()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(&self.jac.rows_to_internal(b))
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        self.jac.rows_from_internal(&self.lu.solve_transpose(b))
    }

    /// Smallest singular value and right singular vector.
    pub fn smallest_singular(&self) -> (f64, DVector<f64>) {
        self.lu.smallest_singular(200, 1e-12)
    }
}

/// Assembles `D_X G(theta, X)`.
pub fn assemble_jacobian(p: &TruncatedProblem, x: &WindowVector) -> Result<TruncatedJacobian> {
    p.check_vector(x)?;
    let d = p.dim();
    let ds = p.left_rows.nrows();
    let big_n = p.half_window as i64;
    let size = p.size();
    // left rows 0..ds, interior rows ds.., right rows last
    let kl = ds + d - 1;
    let ku = (d - 1).max(d - ds);
    let mut band = BandedMatrix::zeros(size, kl, ku);
    for i in 0..ds {
        for j in 0..d {
            band.set(i, j, p.left_rows[(i, j)]);
        }
    }
    for (k, n) in (-big_n..big_n).enumerate() {
        let a = p.system.dfdx(n, p.theta, &x.block(n));
        for i in 0..d {
            let row = ds + k * d + i;
            for j in 0..d {
                band.set(row, k * d + j, -a[(i, j)]);
            }
            band.set(row, (k + 1) * d + i, 1.0);
        }
    }
    let last = 2 * p.half_window * d;
    for i in 0..d - ds {
        for j in 0..d {
            band.set(ds + last + i, last + j, p.right_rows[(i, j)]);
        }
    }
    Ok(TruncatedJacobian {
        band,
        dim: d,
        left: ds,
    })
}

/// Largest block norm over `|n| >= (1 - fraction) N`.
pub fn tail_mass(x: &WindowVector, fraction: f64) -> f64 {
    assert!(
        fraction > 0.0 && fraction < 1.0,
        "fraction must lie in (0, 1)"
    );
    let cut = (1.0 - fraction) * x.half_window() as f64;
    x.indices()
        .filter(|n| n.unsigned_abs() as f64 >= cut)
        .map(|n| x.block(n).norm())
        .fold(0.0, f64::max)
}

/// Doubles the window until the tail of the solution is below `tail_tol`.
///
/// After every doubling `refresh` recomputes the solution on the enlarged
/// window from the zero-padded one (a Newton correction during
/// continuation).
pub fn adapt_window<R>(
    p: &TruncatedProblem,
    x: &WindowVector,
    tail_tol: f64,
    n_max: usize,
    mut refresh: R,
) -> Result<(TruncatedProblem, WindowVector)>
where
    R: FnMut(&TruncatedProblem, WindowVector) -> Result<WindowVector>,
{
    if tail_tol <= 0.0 {
        return Err(Error::invalid("tail_tol", "must be positive"));
    }
    let mut p = p.clone();
    let mut x = x.clone();
    while tail_mass(&x, 0.25) > tail_tol {
        let m = 2 * p.half_window();
        if m > n_max {
            return Err(Error::WindowOverflow {
                half_window: m,
                limit: n_max,
            });
        }
        p = p.with_half_window(m)?;
        x = refresh(&p, x.resized(m))?;
    }
    Ok((p, x))
}
