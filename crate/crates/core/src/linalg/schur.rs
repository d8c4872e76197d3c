//! Real Schur form with a selected group of eigenvalues moved to the
//! leading diagonal blocks.
//!
//! The unordered form comes from nalgebra's Francis iteration; ordering is
//! done by direct swapping of adjacent 1x1/2x2 blocks (Sylvester solve
//! followed by an orthogonal change of basis). Complex conjugate pairs stay
//! together in one 2x2 block.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// `a = q * t * q^T` with `t` quasi upper triangular and the first
/// `selected` columns of `q` spanning the invariant subspace of the selected
/// eigenvalues.
#[derive(Debug, Clone)]
pub struct OrderedSchur {
    pub q: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub selected: usize,
    pub eigenvalues: Vec<Complex<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    size: usize,
}

fn block_eigenvalues(t: &DMatrix<f64>, b: Block) -> Vec<Complex<f64>> {
    if b.size == 1 {
        return vec![Complex::new(t[(b.start, b.start)], 0.0)];
    }
    let i = b.start;
    let (p, q, r, s) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let tr = 0.5 * (p + s);
    let disc = 0.25 * (p - s) * (p - s) + q * r;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        vec![Complex::new(tr + sq, 0.0), Complex::new(tr - sq, 0.0)]
    } else {
        let sq = (-disc).sqrt();
        vec![Complex::new(tr, sq), Complex::new(tr, -sq)]
    }
}

fn rotate(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, i: usize, c: f64, s: f64) {
    // t <- G^T t G, q <- q G with G acting on coordinates (i, i + 1)
    let n = t.nrows();
    for j in 0..n {
        let (a, b) = (t[(i, j)], t[(i + 1, j)]);
        t[(i, j)] = c * a + s * b;
        t[(i + 1, j)] = -s * a + c * b;
    }
    for j in 0..n {
        let (a, b) = (t[(j, i)], t[(j, i + 1)]);
        t[(j, i)] = c * a + s * b;
        t[(j, i + 1)] = -s * a + c * b;
        let (a, b) = (q[(j, i)], q[(j, i + 1)]);
        q[(j, i)] = c * a + s * b;
        q[(j, i + 1)] = -s * a + c * b;
    }
}

/// Splits 2x2 blocks with real eigenvalues into two 1x1 blocks.
fn split_real_pairs(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, scale: f64) {
    let n = t.nrows();
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)].abs() <= f64::EPSILON * scale {
            t[(i + 1, i)] = 0.0;
            i += 1;
            continue;
        }
        let ev = block_eigenvalues(t, Block { start: i, size: 2 });
        if ev[0].im == 0.0 {
            // eigenvector of the block for ev[0]
            let lam = ev[0].re;
            let (p, qq, r, s) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let v1 = (qq, lam - p);
            let v2 = (lam - s, r);
            let (x, y) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) {
                v1
            } else {
                v2
            };
            let h = x.hypot(y);
            if h > 0.0 {
                rotate(t, q, i, x / h, y / h);
            }
            t[(i + 1, i)] = 0.0;
            i += 1;
        } else {
            i += 2;
        }
    }
}

fn blocks(t: &DMatrix<f64>) -> Vec<Block> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            out.push(Block { start: i, size: 2 });
            i += 2;
        } else {
            out.push(Block { start: i, size: 1 });
            i += 1;
        }
    }
    out
}

/// Exchanges the adjacent diagonal blocks of sizes `p` (at `i`) and `r`
/// (at `i + p`).
fn swap_blocks(
    t: &mut DMatrix<f64>,
    q: &mut DMatrix<f64>,
    i: usize,
    p: usize,
    r: usize,
) -> Result<()> {
    let m = p + r;
    let a11 = t.view((i, i), (p, p)).clone_owned();
    let a22 = t.view((i + p, i + p), (r, r)).clone_owned();
    let a12 = t.view((i, i + p), (p, r)).clone_owned();
    // A11 X - X A22 = A12 as a (p r) x (p r) linear system, column-major vec(X)
    let k = p * r;
    let mut sys = DMatrix::zeros(k, k);
    for col in 0..r {
        for row in 0..p {
            let eq = col * p + row;
            for l in 0..p {
                sys[(eq, col * p + l)] += a11[(row, l)];
            }
            for l in 0..r {
                sys[(eq, l * p + row)] -= a22[(l, col)];
            }
        }
    }
    let rhs = DVector::from_iterator(k, a12.iter().copied());
    let x = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SchurFailure("blocks to swap share an eigenvalue".into()))?;
    let x = DMatrix::from_column_slice(p, r, x.as_slice());

    // basis whose first r columns span [-X; I]
    let mut basis = DMatrix::zeros(m, m + r);
    basis.view_mut((0, 0), (p, r)).copy_from(&(-&x));
    basis.view_mut((p, 0), (r, r)).fill_with_identity();
    basis.view_mut((0, r), (m, m)).fill_with_identity();
    let g = basis.qr().q();

    let rows = t.rows(i, m).clone_owned();
    t.rows_mut(i, m).copy_from(&(g.transpose() * rows));
    let cols = t.columns(i, m).clone_owned();
    t.columns_mut(i, m).copy_from(&(&cols * &g));
    let qc = q.columns(i, m).clone_owned();
    q.columns_mut(i, m).copy_from(&(qc * &g));

    let scale = t.norm().max(f64::MIN_POSITIVE);
    let lower = t.view((i + r, i), (p, r)).norm();
    if lower > 1e-8 * scale {
        return Err(Error::SchurFailure(format!(
            "block swap is ill conditioned (residual {lower:e})"
        )));
    }
    t.view_mut((i + r, i), (p, r)).fill(0.0);
    Ok(())
}

/// Real Schur decomposition of `a` with the eigenvalues satisfying `select`
/// ordered first.
pub fn ordered_schur(
    a: &DMatrix<f64>,
    select: impl Fn(Complex<f64>) -> bool,
) -> Result<OrderedSchur> {
    assert!(a.is_square());
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::SchurFailure("Francis iteration did not converge".into()))?;
    let (mut q, mut t) = schur.unpack();
    for j in 0..n {
        for i in j + 2..n {
            t[(i, j)] = 0.0;
        }
    }
    split_real_pairs(&mut t, &mut q, scale);

    let mut head = 0;
    loop {
        let bl = blocks(&t);
        // first selected block at or after `head`
        let Some(pos) = bl
            .iter()
            .position(|b| b.start >= head && select(block_eigenvalues(&t, *b)[0]))
        else {
            break;
        };
        let mut idx = pos;
        loop {
            let cur = blocks(&t);
            if idx == 0 || cur[idx - 1].start < head {
                break;
            }
            let (prev, this) = (cur[idx - 1], cur[idx]);
            swap_blocks(&mut t, &mut q, prev.start, prev.size, this.size)?;
            split_real_pairs(&mut t, &mut q, scale);
            idx = blocks(&t)
                .iter()
                .position(|b| b.start == prev.start)
                .ok_or_else(|| {
                    Error::SchurFailure("block structure lost during reordering".into())
                })?;
        }
        let cur = blocks(&t);
        head = cur[idx].start + cur[idx].size;
        if head >= n {
            break;
        }
    }

    let bl = blocks(&t);
    let mut selected = 0;
    let mut eigenvalues = Vec::with_capacity(n);
    let mut in_prefix = true;
    for b in &bl {
        let ev = block_eigenvalues(&t, *b);
        if select(ev[0]) && in_prefix {
            selected += b.size;
        } else {
            in_prefix = false;
        }
        eigenvalues.extend(ev);
    }
    Ok(OrderedSchur {
        q,
        t,
        selected,
        eigenvalues,
    })
}
