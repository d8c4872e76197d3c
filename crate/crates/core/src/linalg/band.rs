//! Square band matrices and their LU factorization with partial pivoting.
//!
//! Storage is row-major. Row `i` keeps columns `i - kl ..= i + ku + kl`; the
//! extra `kl` superdiagonals absorb the fill-in produced by row interchanges,
//! so factorization happens in place.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    /// Band copy of a dense square matrix; bandwidths are detected from the
    /// nonzero pattern.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        assert!(a.is_square(), "band matrices are square");
        let n = a.nrows();
        let (mut kl, mut ku) = (0, 0);
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != 0.0 {
                    if i > j {
                        kl = kl.max(i - j);
                    } else {
                        ku = ku.max(j - i);
                    }
                }
            }
        }
        let mut b = BandedMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                b.set(i, j, a[(i, j)]);
            }
        }
        b
    }

    pub fn identity(n: usize) -> Self {
        let mut b = BandedMatrix::zeros(n, 0, 0);
        for i in 0..n {
            b.set(i, i, 1.0);
        }
        b
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.kl < i || j > i + self.ku + self.kl {
            None
        } else {
            Some(i * self.width + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i + self.ku {
            return 0.0;
        }
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Panics when `(i, j)` lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band (kl = {}, ku = {})",
            self.kl,
            self.ku
        );
        let s = i * self.width + (j + self.kl - i);
        self.data[s] = value;
    }

    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        DVector::from_fn(self.n, |i, _| {
            self.row_range(i).map(|j| self.get(i, j) * x[j]).sum()
        })
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            for j in self.row_range(i) {
                y[j] += self.get(i, j) * x[i];
            }
        }
        y
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in self.row_range(i) {
                a[(i, j)] = self.get(i, j);
            }
        }
        a
    }

    pub fn lu(&self) -> BandLu {
        BandLu::factor(self.clone())
    }
}

/// LU factors `P A = L U` of a band matrix, LAPACK `gbtrf` style: row
/// interchanges are applied sequentially and the multipliers stay where they
/// were computed.
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
    swaps: usize,
    min_pivot: f64,
    norm: f64,
}

impl BandLu {
    pub fn factor(mut a: BandedMatrix) -> Self {
        let n = a.n;
        let (kl, ku) = (a.kl, a.ku);
        let norm = a.norm_inf();
        let floor = if norm > 0.0 {
            f64::EPSILON * norm
        } else {
            f64::MIN_POSITIVE
        };
        let mut pivots = Vec::with_capacity(n);
        let mut swaps = 0;
        let mut min_pivot = f64::INFINITY;

        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.slot(k, k).unwrap()].abs();
            for i in k + 1..=last {
                let v = a.data[a.slot(i, k).unwrap()].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots.push(p);
            let right = (k + ku + kl).min(n - 1);
            if p != k {
                swaps += 1;
                for j in k..=right {
                    let (s1, s2) = (a.slot(k, j).unwrap(), a.slot(p, j).unwrap());
                    a.data.swap(s1, s2);
                }
            }
            let kk = a.slot(k, k).unwrap();
            min_pivot = min_pivot.min(a.data[kk].abs());
            if a.data[kk] == 0.0 {
                // exact zero pivot: perturb so that solves stay finite, the
                // recorded min_pivot still reports the singularity
                a.data[kk] = floor;
            }
            let piv = a.data[kk];
            for i in k + 1..=last {
                let ik = a.slot(i, k).unwrap();
                let m = a.data[ik] / piv;
                a.data[ik] = m;
                if m != 0.0 {
                    for j in k + 1..=right {
                        let kj = a.data[a.slot(k, j).unwrap()];
                        let ij = a.slot(i, j).unwrap();
                        a.data[ij] -= m * kj;
                    }
                }
            }
        }
        BandLu {
            lu: a,
            pivots,
            swaps,
            min_pivot,
            norm,
        }
    }

    pub fn size(&self) -> usize {
        self.lu.n
    }

    /// Smallest absolute pivot encountered before any zero-pivot perturbation.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Infinity norm of the factored matrix.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    fn u(&self, i: usize, j: usize) -> f64 {
        self.lu.data[self.lu.slot(i, j).unwrap()]
    }

    /// Sign of the determinant, `None` when a pivot was exactly zero.
    pub fn det_sign(&self) -> Option<i8> {
        if self.min_pivot == 0.0 {
            return None;
        }
        let mut sign: i8 = if self.swaps.is_multiple_of(2) { 1 } else { -1 };
        for k in 0..self.lu.n {
            if self.u(k, k) < 0.0 {
                sign = -sign;
            }
        }
        Some(sign)
    }

    /// Sign of the determinant, rejecting pivots below `rel_tol * ||A||_inf`.
    pub fn checked_det_sign(&self, rel_tol: f64) -> Result<i8> {
        let threshold = rel_tol * self.norm;
        if self.min_pivot < threshold || self.min_pivot == 0.0 {
            return Err(Error::NumericallySingular {
                pivot: self.min_pivot,
                threshold,
            });
        }
        Ok(self.det_sign().expect("nonzero pivots"))
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.lu.n;
        let kl = self.lu.kl;
        let ku = self.lu.ku;
        assert_eq!(b.len(), n);
        let mut x = b.clone();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap_rows(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.u(i, k) * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + ku + kl).min(n - 1) {
                s -= self.u(k, j) * x[j];
            }
            x[k] = s / self.u(k, k);
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.lu.n;
        let kl = self.lu.kl;
        let ku = self.lu.ku;
        assert_eq!(b.len(), n);
        let mut y = b.clone();
        // U^T y = b
        for k in 0..n {
            let mut s = y[k];
            for i in k.saturating_sub(ku + kl)..k {
                s -= self.u(i, k) * y[i];
            }
            y[k] = s / self.u(k, k);
        }
        // undo the elimination steps in reverse order
        for k in (0..n).rev() {
            let mut s = y[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                s -= self.u(i, k) * y[i];
            }
            y[k] = s;
            let p = self.pivots[k];
            if p != k {
                y.swap_rows(k, p);
            }
        }
        y
    }

    /// Smallest singular value and its right singular vector by inverse
    /// iteration on `A^T A`.
    pub fn smallest_singular(&self, max_iter: usize, rel_tol: f64) -> (f64, DVector<f64>) {
        let n = self.lu.n;
        // deterministic start with components in every direction
        let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin());
        v /= v.norm();
        let mut sigma = f64::INFINITY;
        for _ in 0..max_iter.max(1) {
            let w = self.solve(&self.solve_transpose(&v));
            let nw = w.norm();
            if !nw.is_finite() || nw == 0.0 {
                break;
            }
            let next = 1.0 / nw.sqrt();
            v = w / nw;
            let converged = (sigma - next).abs() <= rel_tol * next;
            sigma = next;
            if converged {
                break;
            }
        }
        (sigma, v)
    }
}
