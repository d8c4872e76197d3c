use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::SystemFamily;

type MatrixField = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Linear family with `a_n(theta) = a_plus(theta)` for `n >= 0` and
/// `a_minus(theta)` for `n < 0`.
#[derive(Clone)]
pub struct PiecewiseLinearFamily {
    dim: usize,
    a_plus: MatrixField,
    a_minus: MatrixField,
    label: String,
}

impl PiecewiseLinearFamily {
    pub fn new(
        dim: usize,
        a_plus: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        a_minus: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        PiecewiseLinearFamily {
            dim,
            a_plus: Arc::new(a_plus),
            a_minus: Arc::new(a_minus),
            label: "piecewise".into(),
        }
    }

    /// Parameter-independent system.
    pub fn constant(a_plus: DMatrix<f64>, a_minus: DMatrix<f64>) -> Self {
        assert_eq!(a_plus.shape(), a_minus.shape());
        let dim = a_plus.nrows();
        let mut fam = Self::new(dim, move |_| a_plus.clone(), move |_| a_minus.clone());
        fam.label = "constant".into();
        fam
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn coefficient(&self, n: i64, theta: f64) -> DMatrix<f64> {
        if n >= 0 {
            (self.a_plus)(theta)
        } else {
            (self.a_minus)(theta)
        }
    }
}

impl std::fmt::Debug for PiecewiseLinearFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PiecewiseLinearFamily")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl SystemFamily for PiecewiseLinearFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn f(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.coefficient(n, theta) * x
    }

    fn dfdx(&self, n: i64, theta: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        self.coefficient(n, theta)
    }

    fn a_plus(&self, theta: f64) -> DMatrix<f64> {
        (self.a_plus)(theta)
    }

    fn a_minus(&self, theta: f64) -> DMatrix<f64> {
        (self.a_minus)(theta)
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Block-diagonal direct sum of families.
#[derive(Clone)]
pub struct DirectSum {
    parts: Vec<Arc<dyn SystemFamily>>,
    offsets: Vec<usize>,
    dim: usize,
}

impl DirectSum {
    pub fn new(parts: Vec<Arc<dyn SystemFamily>>) -> Self {
        let mut offsets = Vec::with_capacity(parts.len());
        let mut dim = 0;
        for p in &parts {
            offsets.push(dim);
            dim += p.dim();
        }
        DirectSum {
            parts,
            offsets,
            dim,
        }
    }

    pub fn parts(&self) -> &[Arc<dyn SystemFamily>] {
        &self.parts
    }

    fn split(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.parts
            .iter()
            .zip(&self.offsets)
            .map(|(p, &o)| x.rows(o, p.dim()).clone_owned())
            .collect()
    }

    fn stack(&self, pieces: impl Iterator<Item = DVector<f64>>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (v, &o) in pieces.zip(&self.offsets) {
            out.rows_mut(o, v.len()).copy_from(&v);
        }
        out
    }

    fn block_diag(&self, blocks: impl Iterator<Item = DMatrix<f64>>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (b, &o) in blocks.zip(&self.offsets) {
            out.view_mut((o, o), b.shape()).copy_from(&b);
        }
        out
    }
}

impl SystemFamily for DirectSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn f(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        let xs = self.split(x);
        self.stack(self.parts.iter().zip(&xs).map(|(p, xi)| p.f(n, theta, xi)))
    }

    fn dfdx(&self, n: i64, theta: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let xs = self.split(x);
        self.block_diag(
            self.parts
                .iter()
                .zip(&xs)
                .map(|(p, xi)| p.dfdx(n, theta, xi)),
        )
    }

    fn dfdtheta(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        let xs = self.split(x);
        self.stack(
            self.parts
                .iter()
                .zip(&xs)
                .map(|(p, xi)| p.dfdtheta(n, theta, xi)),
        )
    }

    fn a_plus(&self, theta: f64) -> DMatrix<f64> {
        self.block_diag(self.parts.iter().map(|p| p.a_plus(theta)))
    }

    fn a_minus(&self, theta: f64) -> DMatrix<f64> {
        self.block_diag(self.parts.iter().map(|p| p.a_minus(theta)))
    }

    fn f_inf_plus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        let xs = self.split(x);
        self.stack(
            self.parts
                .iter()
                .zip(&xs)
                .map(|(p, xi)| p.f_inf_plus(theta, xi)),
        )
    }

    fn f_inf_minus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        let xs = self.split(x);
        self.stack(
            self.parts
                .iter()
                .zip(&xs)
                .map(|(p, xi)| p.f_inf_minus(theta, xi)),
        )
    }

    fn is_linear(&self) -> bool {
        self.parts.iter().all(|p| p.is_linear())
    }

    fn name(&self) -> String {
        let names: Vec<String> = self.parts.iter().map(|p| p.name()).collect();
        names.join(" (+) ")
    }
}

/// Reparametrization `theta -> theta + offset` of the circle chart.
#[derive(Clone)]
pub struct ShiftedChart {
    inner: Arc<dyn SystemFamily>,
    offset: f64,
}

impl ShiftedChart {
    pub fn new(inner: Arc<dyn SystemFamily>, offset: f64) -> Self {
        ShiftedChart { inner, offset }
    }
}

impl SystemFamily for ShiftedChart {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn f(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.inner.f(n, theta + self.offset, x)
    }

    fn dfdx(&self, n: i64, theta: f64, x: &DVector<f64>) -> DMatrix<f64> {
        self.inner.dfdx(n, theta + self.offset, x)
    }

    fn dfdtheta(&self, n: i64, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.inner.dfdtheta(n, theta + self.offset, x)
    }

    fn a_plus(&self, theta: f64) -> DMatrix<f64> {
        self.inner.a_plus(theta + self.offset)
    }

    fn a_minus(&self, theta: f64) -> DMatrix<f64> {
        self.inner.a_minus(theta + self.offset)
    }

    fn f_inf_plus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.inner.f_inf_plus(theta + self.offset, x)
    }

    fn f_inf_minus(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.inner.f_inf_minus(theta + self.offset, x)
    }

    fn is_linear(&self) -> bool {
        self.inner.is_linear()
    }

    fn name(&self) -> String {
        format!("{} shifted by {}", self.inner.name(), self.offset)
    }
}

/// `R(w theta / 2) diag(alpha, beta) R(w theta / 2)^T`: a saddle whose
/// stable direction turns `w` half-turns around the circle.
pub fn rotating_saddle(
    alpha: f64,
    beta: f64,
    winding: u32,
) -> impl Fn(f64) -> DMatrix<f64> + Send + Sync + Clone {
    move |theta: f64| {
        let phi = 0.5 * winding as f64 * theta;
        let (c, s) = (phi.cos(), phi.sin());
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![alpha, beta]));
        &r * d * r.transpose()
    }
}

/// A randomly drawn block-diagonal linear family with known orientation
/// invariants of its asymptotic stable bundles.
pub struct RandomBlockFamily {
    pub family: DirectSum,
    pub w1_plus: i8,
    pub w1_minus: i8,
    pub windings: Vec<(u32, u32)>,
}

/// One to two rotating 2x2 saddle blocks with windings in `{0, 1, 2}` at
/// each end, optionally followed by a constant scalar stable block.
pub fn random_block_family<R: Rng + ?Sized>(rng: &mut R) -> RandomBlockFamily {
    let blocks = rng.gen_range(1..=2);
    let mut parts: Vec<Arc<dyn SystemFamily>> = Vec::new();
    let mut windings = Vec::new();
    let (mut w1_plus, mut w1_minus) = (1i8, 1i8);
    for _ in 0..blocks {
        let kp = rng.gen_range(0..=2u32);
        let km = rng.gen_range(0..=2u32);
        let (ap, bp) = (rng.gen_range(0.2..0.8), rng.gen_range(1.5..4.0));
        let (am, bm) = (rng.gen_range(0.2..0.8), rng.gen_range(1.5..4.0));
        let fam =
            PiecewiseLinearFamily::new(2, rotating_saddle(ap, bp, kp), rotating_saddle(am, bm, km))
                .with_label(format!("saddle(+{kp}, -{km})"));
        parts.push(Arc::new(fam));
        windings.push((kp, km));
        if kp % 2 == 1 {
            w1_plus = -w1_plus;
        }
        if km % 2 == 1 {
            w1_minus = -w1_minus;
        }
    }
    if rng.gen_bool(0.5) {
        let s = rng.gen_range(0.2..0.8);
        let a = DMatrix::from_element(1, 1, s);
        parts.push(Arc::new(PiecewiseLinearFamily::constant(a.clone(), a)));
    }
    RandomBlockFamily {
        family: DirectSum::new(parts),
        w1_plus,
        w1_minus,
        windings,
    }
}
