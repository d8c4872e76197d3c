//! Frame transport of subspace families around the circle and the
//! orientation invariant `w1 = sign det C` of the resulting loop.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, polar_factor, principal_cosines};
use crate::spectral::hyperbolic_splitting;
use crate::systems::SystemFamily;

/// Sample points `0 = theta_0 < ... < theta_m = 2 pi`; the last node is
/// identified with the first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircleGrid {
    nodes: Vec<f64>,
}

impl CircleGrid {
    pub const MIN_INTERVALS: usize = 8;

    /// `m` equal intervals.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < Self::MIN_INTERVALS {
            return Err(Error::invalid(
                "grid_m",
                format!("need at least {} intervals, got {m}", Self::MIN_INTERVALS),
            ));
        }
        let mut nodes: Vec<f64> = (0..m).map(|i| TAU * i as f64 / m as f64).collect();
        nodes.push(TAU);
        Ok(CircleGrid { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < Self::MIN_INTERVALS + 1 {
            return Err(Error::invalid("grid", "too few nodes"));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != TAU {
            return Err(Error::invalid(
                "grid",
                "nodes must start at 0 and end at 2 pi",
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid", "nodes must be strictly increasing"));
        }
        Ok(CircleGrid { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of intervals `m`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Union of the nodes of two grids.
    pub fn merge(&self, other: &CircleGrid) -> CircleGrid {
        let mut nodes: Vec<f64> = self
            .nodes
            .iter()
            .chain(other.nodes.iter())
            .copied()
            .collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        CircleGrid { nodes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    /// Minimum principal-angle cosine between consecutive subspaces.
    pub alignment_floor: f64,
    /// Maximum bisection depth for a misaligned interval.
    pub max_refinements: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            alignment_floor: 0.9,
            max_refinements: 20,
        }
    }
}

/// Frames of a rank-`k` subspace family carried once around the circle.
#[derive(Debug, Clone)]
pub struct LoopTransport {
    /// Input grid plus the nodes added by refinement.
    pub grid: CircleGrid,
    pub frames: Vec<DMatrix<f64>>,
    /// `frames[0]^T frames[m]`: the end frame expressed in the start frame.
    pub closure: DMatrix<f64>,
    pub min_alignment: f64,
}

impl LoopTransport {
    pub fn rank(&self) -> usize {
        self.closure.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].nrows()
    }

    /// Frame at an arbitrary `theta`, continuous in `theta` on the whole real
    /// line: inside `[0, 2 pi]` the frame of the enclosing node is carried to
    /// `theta`; outside, each full turn multiplies by the closure matrix.
    pub fn frame_at<F>(&self, theta: f64, subspace_at: F) -> Result<DMatrix<f64>>
    where
        F: Fn(f64) -> Result<DMatrix<f64>>,
    {
        if self.rank() == 0 {
            return Ok(DMatrix::zeros(self.dim(), 0));
        }
        if !(0.0..=TAU).contains(&theta) {
            let turns = (theta / TAU).floor();
            let base = self.frame_at(theta - turns * TAU, subspace_at)?;
            let k = turns as i64;
            let step = if k >= 0 {
                self.closure.clone()
            } else {
                self.closure.transpose()
            };
            let mut out = base;
            for _ in 0..k.unsigned_abs() {
                out = &out * &step;
            }
            return Ok(out);
        }
        let nodes = self.grid.nodes();
        let i = match nodes.binary_search_by(|x| x.partial_cmp(&theta).unwrap()) {
            Ok(i) => return Ok(self.frames[i].clone()),
            Err(i) => i - 1,
        };
        let target = subspace_at(theta)?;
        Ok(carry(&self.frames[i], &target))
    }
}

/// Projects `frame` onto the span of the orthonormal `target` and restores
/// orthonormality with the polar factor.
fn carry(frame: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
    let m = target.transpose() * frame;
    target * polar_factor(&m)
}

fn min_cosine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_cosines(a, b).last().copied().unwrap_or(1.0)
}

/// Transports the frame `subspace_at(0)` around `grid`.
pub fn transport_frames<F>(
    subspace_at: F,
    grid: &CircleGrid,
    opts: &TransportOptions,
) -> Result<LoopTransport>
where
    F: Fn(f64) -> Result<DMatrix<f64>> + Sync,
{
    let initial = subspace_at(grid.nodes()[0])?;
    transport_frames_from(initial, subspace_at, grid, opts)
}

/// Transports a chosen initial frame of the subspace at `theta_0`.
pub fn transport_frames_from<F>(
    initial: DMatrix<f64>,
    subspace_at: F,
    grid: &CircleGrid,
    opts: &TransportOptions,
) -> Result<LoopTransport>
where
    F: Fn(f64) -> Result<DMatrix<f64>> + Sync,
{
    let nodes = grid.nodes();
    let samples: Vec<DMatrix<f64>> = nodes
        .par_iter()
        .map(|&t| subspace_at(t).map(|f| orthonormalize(&f)))
        .collect::<Result<_>>()?;
    let k = initial.ncols();
    for (s, &t) in samples.iter().zip(nodes) {
        if s.ncols() != k {
            return Err(Error::RankDrop {
                expected: k,
                found: s.ncols(),
                theta: t,
            });
        }
    }
    let d = initial.nrows();
    if k == 0 {
        return Ok(LoopTransport {
            grid: grid.clone(),
            frames: vec![DMatrix::zeros(d, 0); nodes.len()],
            closure: DMatrix::zeros(0, 0),
            min_alignment: 1.0,
        });
    }

    let mut start = orthonormalize(&initial);
    // the chosen frame must span the sampled subspace at theta_0
    start = carry(&start, &samples[0]);

    let mut out_nodes = vec![nodes[0]];
    let mut frames = vec![start];
    let mut min_alignment: f64 = 1.0;

    struct Walk<'a, F> {
        subspace_at: &'a F,
        opts: &'a TransportOptions,
        rank: usize,
    }

    impl<F: Fn(f64) -> Result<DMatrix<f64>>> Walk<'_, F> {
        #[allow(clippy::too_many_arguments)]
        fn advance(
            &self,
            lo: f64,
            hi: f64,
            target: DMatrix<f64>,
            depth: usize,
            out_nodes: &mut Vec<f64>,
            frames: &mut Vec<DMatrix<f64>>,
            min_alignment: &mut f64,
        ) -> Result<()> {
            let cur = frames.last().unwrap();
            let cosine = min_cosine(cur, &target);
            if cosine >= self.opts.alignment_floor {
                *min_alignment = min_alignment.min(cosine);
                let next = carry(cur, &target);
                frames.push(next);
                out_nodes.push(hi);
                return Ok(());
            }
            if depth >= self.opts.max_refinements {
                return Err(Error::AlignmentFailure {
                    lo,
                    hi,
                    cosine,
                    refinements: depth,
                });
            }
            let mid = 0.5 * (lo + hi);
            let mid_frame = orthonormalize(&(self.subspace_at)(mid)?);
            if mid_frame.ncols() != self.rank {
                return Err(Error::RankDrop {
                    expected: self.rank,
                    found: mid_frame.ncols(),
                    theta: mid,
                });
            }
            self.advance(
                lo,
                mid,
                mid_frame,
                depth + 1,
                out_nodes,
                frames,
                min_alignment,
            )?;
            self.advance(mid, hi, target, depth + 1, out_nodes, frames, min_alignment)
        }
    }

    let walk = Walk {
        subspace_at: &subspace_at,
        opts,
        rank: k,
    };
    for i in 0..nodes.len() - 1 {
        walk.advance(
            nodes[i],
            nodes[i + 1],
            samples[i + 1].clone(),
            0,
            &mut out_nodes,
            &mut frames,
            &mut min_alignment,
        )?;
    }

    let first = &frames[0];
    let last = frames.last().unwrap();
    let closure = first.transpose() * last;
    let residual = (first * &closure - last).norm();
    if residual > 1e-8 {
        return Err(Error::ClosureMismatch { residual });
    }
    Ok(LoopTransport {
        grid: CircleGrid { nodes: out_nodes },
        frames,
        closure,
        min_alignment,
    })
}

/// `sign det C` of a transported loop.
pub fn w1(transport: &LoopTransport) -> Result<i8> {
    if transport.rank() == 0 {
        return Ok(1);
    }
    let det = transport.closure.determinant();
    if det.abs() < 1e-6 {
        return Err(Error::DegenerateClosure { det });
    }
    Ok(if det > 0.0 { 1 } else { -1 })
}

/// Index-bundle data of the linearization along the trivial branch,
/// represented by rank and orientation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleInvariants {
    pub rank_plus: usize,
    pub rank_minus: usize,
    pub w1_plus: i8,
    pub w1_minus: i8,
    pub w1_index: i8,
    pub index: i64,
    pub min_alignment_plus: f64,
    pub min_alignment_minus: f64,
}

impl BundleInvariants {
    /// A nontrivial branch is forced when the stable bundles twist
    /// differently at the two ends.
    pub fn predicts_bifurcation(&self) -> bool {
        self.w1_plus != self.w1_minus
    }
}

/// Which end of the lattice an asymptotic object belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn matrix(self, system: &dyn SystemFamily, theta: f64) -> DMatrix<f64> {
        match self {
            Side::Plus => system.a_plus(theta),
            Side::Minus => system.a_minus(theta),
        }
    }
}

/// Orthonormal frame of `E^s(theta, side)`.
pub fn stable_frame_at(
    system: &dyn SystemFamily,
    side: Side,
    theta: f64,
    gap_tol: f64,
) -> Result<DMatrix<f64>> {
    Ok(hyperbolic_splitting(&side.matrix(system, theta), gap_tol)?.stable_frame)
}

/// Ranks, orientation invariants and Fredholm index of the loop of
/// linearizations, from the stable bundles at both ends.
pub fn index_bundle_invariants(
    system: &dyn SystemFamily,
    grid: &CircleGrid,
    gap_tol: f64,
    opts: &TransportOptions,
) -> Result<BundleInvariants> {
    let mut ranks = [0usize; 2];
    for (slot, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
        let dims: Vec<usize> = grid
            .nodes()
            .par_iter()
            .map(|&t| stable_frame_at(system, side, t, gap_tol).map(|f| f.ncols()))
            .collect::<Result<_>>()?;
        let first = dims[0];
        if let Some(pos) = dims.iter().position(|&r| r != first) {
            return Err(Error::IndexMismatch(format!(
                "stable dimension at {side:?} infinity changes from {first} to {} at theta = {}",
                dims[pos],
                grid.nodes()[pos]
            )));
        }
        ranks[slot] = first;
    }
    let plus = transport_frames(
        |t| stable_frame_at(system, Side::Plus, t, gap_tol),
        grid,
        opts,
    )?;
    let minus = transport_frames(
        |t| stable_frame_at(system, Side::Minus, t, gap_tol),
        grid,
        opts,
    )?;
    let w1_plus = w1(&plus)?;
    let w1_minus = w1(&minus)?;
    Ok(BundleInvariants {
        rank_plus: ranks[0],
        rank_minus: ranks[1],
        w1_plus,
        w1_minus,
        w1_index: w1_plus * w1_minus,
        index: ranks[0] as i64 - ranks[1] as i64,
        min_alignment_plus: plus.min_alignment,
        min_alignment_minus: minus.min_alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Paper7Config, Paper7Family};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn half_angle(t: f64) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_column_slice(
            2,
            1,
            &[(0.5 * t).cos(), (0.5 * t).sin()],
        ))
    }

    #[test]
    fn uniform_grid_shape() {
        let g = CircleGrid::uniform(16).unwrap();
        assert_eq!(g.intervals(), 16);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(*g.nodes().last().unwrap(), TAU);
        assert!(CircleGrid::uniform(4).is_err());
        assert!(CircleGrid::from_nodes(vec![0.0, 1.0, 0.5, 2.0, 3.0, 4.0, 5.0, 6.0, TAU]).is_err());
    }

    #[test]
    fn constant_subspace_closes_trivially() {
        let g = CircleGrid::uniform(16).unwrap();
        let tr = transport_frames(
            |_| Ok(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])),
            &g,
            &Default::default(),
        )
        .unwrap();
        assert_relative_eq!(tr.closure[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(tr.min_alignment, 1.0, epsilon = 1e-14);
        assert_eq!(w1(&tr).unwrap(), 1);
    }

    #[test]
    fn half_angle_line_is_a_moebius_band() {
        let g = CircleGrid::uniform(64).unwrap();
        let tr = transport_frames(half_angle, &g, &Default::default()).unwrap();
        assert!((tr.closure[(0, 0)] + 1.0).abs() <= 1e-8);
        assert_eq!(w1(&tr).unwrap(), -1);
        for f in &tr.frames {
            assert!(((f.transpose() * f)[(0, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_grid_is_refined() {
        // one full turn of a line per loop: consecutive nodes are 90 degrees apart
        let g = CircleGrid::uniform(8).unwrap();
        let full = |t: f64| {
            Ok(DMatrix::from_column_slice(
                2,
                1,
                &[(2.0 * t).cos(), (2.0 * t).sin()],
            ))
        };
        let tr = transport_frames(full, &g, &Default::default()).unwrap();
        assert!(tr.grid.intervals() > 8);
        assert!(tr.min_alignment >= 0.9);
        assert_eq!(w1(&tr).unwrap(), 1);

        let strict = TransportOptions {
            alignment_floor: 0.9,
            max_refinements: 0,
        };
        assert!(matches!(
            transport_frames(full, &g, &strict),
            Err(Error::AlignmentFailure { .. })
        ));
    }

    #[test]
    fn rank_drop_is_detected() {
        let g = CircleGrid::uniform(8).unwrap();
        let f = |t: f64| {
            if t < 3.0 {
                Ok(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            } else {
                Ok(DMatrix::identity(2, 2))
            }
        };
        assert!(matches!(
            transport_frames(f, &g, &Default::default()),
            Err(Error::RankDrop { .. })
        ));
    }

    #[test]
    fn frame_at_is_continuous_and_lifted() {
        let g = CircleGrid::uniform(32).unwrap();
        let tr = transport_frames(half_angle, &g, &Default::default()).unwrap();
        let eps = 1e-9;
        for &t in &[0.3, 1.0, 3.0, 5.5] {
            let a = tr.frame_at(t - eps, half_angle).unwrap();
            let b = tr.frame_at(t + eps, half_angle).unwrap();
            assert!((a - b).norm() < 1e-7);
        }
        // one turn further the frame has flipped
        let a = tr.frame_at(1.0, half_angle).unwrap();
        let b = tr.frame_at(1.0 + TAU, half_angle).unwrap();
        assert_relative_eq!(a, -b, epsilon = 1e-8);
        let c = tr.frame_at(TAU - 1e-12, half_angle).unwrap();
        let d = tr.frame_at(TAU + 1e-12, half_angle).unwrap();
        assert!((c - d).norm() < 1e-8);
    }

    #[test]
    fn example_family_invariants() {
        let p = Paper7Family::new(Paper7Config::default()).unwrap();
        let g = CircleGrid::uniform(64).unwrap();
        let inv = index_bundle_invariants(&p, &g, 1e-6, &Default::default()).unwrap();
        assert_eq!((inv.rank_plus, inv.rank_minus, inv.index), (1, 1, 0));
        assert_eq!((inv.w1_plus, inv.w1_minus, inv.w1_index), (-1, 1, -1));
        assert!(inv.predicts_bifurcation());
    }

    #[test]
    fn constant_family_is_trivial() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let c = crate::systems::PiecewiseLinearFamily::constant(a.clone(), a);
        let inv = index_bundle_invariants(
            &c,
            &CircleGrid::uniform(16).unwrap(),
            1e-6,
            &Default::default(),
        )
        .unwrap();
        assert_eq!((inv.index, inv.w1_index), (0, 1));
        assert!(!inv.predicts_bifurcation());
    }

    #[test]
    fn varying_stable_dimension_is_an_index_mismatch() {
        let b = crate::systems::PiecewiseLinearFamily::new(
            1,
            |t: f64| DMatrix::from_element(1, 1, if t < 3.0 { 0.5 } else { 2.0 }),
            |_| DMatrix::from_element(1, 1, 0.5),
        );
        let r = index_bundle_invariants(
            &b,
            &CircleGrid::uniform(16).unwrap(),
            1e-6,
            &Default::default(),
        );
        assert!(matches!(r, Err(Error::IndexMismatch(_))));
    }
}
