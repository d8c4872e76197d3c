//! Linear algebra kernels shared by the numerical modules.

pub mod band;
pub mod schur;

pub use band::{BandLu, BandedMatrix};
pub use schur::{ordered_schur, OrderedSchur};

use nalgebra::DMatrix;

/// Orthonormal basis of the column space of a full-column-rank matrix.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix signs so that R has a positive diagonal: Q depends continuously on M
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthonormal basis of the orthogonal complement of the column space of an
/// orthonormal `d x k` frame.
pub fn orthogonal_complement(frame: &DMatrix<f64>) -> DMatrix<f64> {
    let d = frame.nrows();
    let k = frame.ncols();
    if k == d {
        return DMatrix::zeros(d, 0);
    }
    let mut aug = DMatrix::zeros(d, k + d);
    aug.columns_mut(0, k).copy_from(frame);
    aug.columns_mut(k, d).fill_with_identity();
    let q = aug.qr().q();
    q.columns(k, d - k).clone_owned()
}

/// Cosines of the principal angles between the column spaces of two
/// orthonormal frames, in descending order.
pub fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    let m = a.transpose() * b;
    m.svd(false, false)
        .singular_values
        .iter()
        .map(|s| s.min(1.0))
        .collect()
}

/// Orthogonal polar factor `U V^T` of a square matrix `M = U S V^T`.
pub fn polar_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
