//! Multilinear lattice interpolation.
//!
//! A lattice is a look-up table of values `θ` placed on a rectilinear grid of
//! knots. Inputs are interpolated from the `2^D` knots of the cell that
//! contains them; the weight on a knot is the product of the per-dimension
//! left/right weights.
//!
//! # Parameter layout
//!
//! `θ` is stored flat with **dimension 0 varying fastest**: the knot with
//! per-dimension indices `(i_0, i_1, ..., i_{D-1})` lives at
//! `i_0 + L_0 * (i_1 + L_1 * (i_2 + ...))`. For a 2×2 grid the order is
//! `(0,0), (1,0), (0,1), (1,1)`. Serialized models rely on this layout.
//!
//! Inputs outside the grid bounds are clamped to the boundary; there is no
//! extrapolation.

mod plf;
mod projection;

pub use plf::PiecewiseLinearFn;
pub use projection::{
    check_monotone, pav_nondecreasing, project_monotone, project_monotone_with, MonotoneCheck,
    MonotoneSpec, ProjectionOptions,
};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Per-dimension stack storage; lattices rarely exceed eight inputs.
pub(crate) type DimVec<T> = SmallVec<[T; 8]>;

/// `a + w(b − a)` clamped to the segment: nondecreasing in `w` when `a ≤ b`,
/// exactly `a` at `w = 0` and never past either endpoint.
#[inline]
pub(crate) fn lerp_monotone_in_weight(a: f64, b: f64, w: f64) -> f64 {
    (a + w * (b - a)).clamp(a.min(b), a.max(b))
}

/// `(1 − w)a + wb` clamped to the segment: nondecreasing in each endpoint for
/// a fixed `w`, and exact when `a = b`.
#[inline]
pub(crate) fn lerp_monotone_in_endpoints(a: f64, b: f64, w: f64) -> f64 {
    ((1.0 - w) * a + w * b).clamp(a.min(b), a.max(b))
}

/// Rectilinear knot grid. Each dimension has at least two strictly
/// increasing, finite knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    knots: Vec<Vec<f64>>,
    strides: Vec<usize>,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    knots: Vec<Vec<f64>>,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;

    fn try_from(repr: GridRepr) -> Result<Self> {
        Grid::new(repr.knots)
    }
}

impl From<Grid> for GridRepr {
    fn from(grid: Grid) -> Self {
        GridRepr { knots: grid.knots }
    }
}

/// Location of a point inside one dimension of a grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    /// Index of the left knot of the enclosing cell.
    pub left: usize,
    /// Weight of the right knot, in `[0, 1]`.
    pub w_right: f64,
    /// `1 / (v[left+1] - v[left])`, zero when the input was clamped from outside.
    pub slope_scale: f64,
}

/// Finds the cell of sorted `knots` containing `x` (right-closed at interior
/// knots, so a point on a knot belongs to the cell to its right).
pub(crate) fn locate(knots: &[f64], x: f64) -> Segment {
    let n = knots.len();
    let first = knots[0];
    let last = knots[n - 1];
    if x < first {
        return Segment {
            left: 0,
            w_right: 0.0,
            slope_scale: 0.0,
        };
    }
    if x > last {
        return Segment {
            left: n - 2,
            w_right: 1.0,
            slope_scale: 0.0,
        };
    }
    let left = (knots.partition_point(|v| *v <= x).max(1) - 1).min(n - 2);
    let lo = knots[left];
    let hi = knots[left + 1];
    let inv = 1.0 / (hi - lo);
    let w_right = if x >= hi { 1.0 } else { ((x - lo) * inv).clamp(0.0, 1.0) };
    Segment {
        left,
        w_right,
        slope_scale: inv,
    }
}

impl Grid {
    pub fn new(knots: Vec<Vec<f64>>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::input("grid needs at least one dimension"));
        }
        let mut strides = Vec::with_capacity(knots.len());
        let mut size = 1usize;
        for (d, v) in knots.iter().enumerate() {
            if v.len() < 2 {
                return Err(Error::input(format!("grid dimension {d} has fewer than 2 knots")));
            }
            if v.iter().any(|k| !k.is_finite()) {
                return Err(Error::input(format!("grid dimension {d} has a non-finite knot")));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::input(format!(
                    "grid dimension {d} knots are not strictly increasing"
                )));
            }
            strides.push(size);
            size = size
                .checked_mul(v.len())
                .ok_or_else(|| Error::input("grid too large"))?;
        }
        Ok(Grid {
            knots,
            strides,
            size,
        })
    }

    /// `num_knots[d]` knots evenly spaced on `[0, 1]` in each dimension.
    pub fn unit(num_knots: &[usize]) -> Result<Self> {
        let knots = num_knots
            .iter()
            .map(|&n| {
                if n < 2 {
                    return Err(Error::input("each dimension needs at least 2 knots"));
                }
                Ok(linspace(0.0, 1.0, n))
            })
            .collect::<Result<Vec<_>>>()?;
        Grid::new(knots)
    }

    pub fn dims(&self) -> usize {
        self.knots.len()
    }

    /// Total number of knots `L = ∏ L_d`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn knots(&self, dim: usize) -> &[f64] {
        &self.knots[dim]
    }

    pub fn num_knots(&self, dim: usize) -> usize {
        self.knots[dim].len()
    }

    pub fn stride(&self, dim: usize) -> usize {
        self.strides[dim]
    }

    /// Flat index of the knot with per-dimension indices `coords`.
    pub fn flat_index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Inverse of [`Grid::flat_index`].
    pub fn coords(&self, mut flat: usize) -> Vec<usize> {
        self.knots
            .iter()
            .map(|v| {
                let c = flat % v.len();
                flat /= v.len();
                c
            })
            .collect()
    }

    /// Position of the knot at `flat` in input space.
    pub fn knot_position(&self, flat: usize) -> Vec<f64> {
        self.coords(flat)
            .into_iter()
            .zip(&self.knots)
            .map(|(c, v)| v[c])
            .collect()
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.knots.iter().map(|v| v[0]).collect()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.knots.iter().map(|v| v[v.len() - 1]).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims() {
            return Err(Error::input(format!(
                "expected {} lattice inputs, got {}",
                self.dims(),
                x.len()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::input("lattice input is NaN"));
        }
        Ok(())
    }

    fn segments(&self, x: &[f64]) -> DimVec<Segment> {
        self.knots
            .iter()
            .zip(x)
            .map(|(v, &xi)| locate(v, xi))
            .collect()
    }

    /// Visits every corner of the cell containing `x` with its flat index and
    /// interpolation weight. `x` must already be validated.
    pub(crate) fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) {
        let segs = self.segments(x);
        let base: usize = segs
            .iter()
            .zip(&self.strides)
            .map(|(s, st)| s.left * st)
            .sum();
        for mask in 0..(1usize << segs.len()) {
            let mut idx = base;
            let mut w = 1.0;
            for (d, seg) in segs.iter().enumerate() {
                if mask >> d & 1 == 1 {
                    idx += self.strides[d];
                    w *= seg.w_right;
                } else {
                    w *= 1.0 - seg.w_right;
                }
            }
            visit(idx, w);
        }
    }

    /// Sparse multilinear interpolation weights `Φ(x)` as `(flat index, weight)`
    /// pairs, one per corner of the enclosing cell.
    pub fn interpolation_weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(1 << self.dims());
        self.for_each_corner(x, |i, w| out.push((i, w)));
        Ok(out)
    }

    pub fn evaluate(&self, theta: &LatticeParams, x: &[f64]) -> Result<f64> {
        self.check_params(theta)?;
        self.check_input(x)?;
        Ok(self.evaluate_unchecked(&theta.0, x))
    }

    pub(crate) fn evaluate_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        self.interpolate(theta, &self.segments(x))
    }

    /// Multilinear interpolation as nested 1-D interpolation, one dimension at
    /// a time. Equal to `Σ Φ(x)_i θ_i` up to rounding, but rounded so that
    /// constant tables are reproduced exactly and the result is nondecreasing
    /// along the last dimension whenever θ is, with no ulp-level dips. The
    /// model places τ last, which makes non-crossing exact in floating point.
    fn interpolate(&self, theta: &[f64], segs: &[Segment]) -> f64 {
        let dims = segs.len();
        let base: usize = segs
            .iter()
            .zip(&self.strides)
            .map(|(s, st)| s.left * st)
            .sum();
        let mut buf: SmallVec<[f64; 16]> = (0..(1usize << dims))
            .map(|mask| {
                let off: usize = (0..dims)
                    .filter(|d| mask >> d & 1 == 1)
                    .map(|d| self.strides[d])
                    .sum();
                theta[base + off]
            })
            .collect();
        for (d, seg) in segs.iter().enumerate() {
            let half = 1usize << (dims - d - 1);
            let w = seg.w_right;
            let last = d + 1 == dims;
            for m in 0..half {
                let (a, b) = (buf[2 * m], buf[2 * m + 1]);
                buf[m] = if last {
                    lerp_monotone_in_weight(a, b, w)
                } else {
                    lerp_monotone_in_endpoints(a, b, w)
                };
            }
        }
        buf[0]
    }

    /// Gradient of the lattice output with respect to `θ`; equal to `Φ(x)`.
    pub fn grad_theta(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.interpolation_weights(x)
    }

    /// Gradient of the lattice output with respect to its inputs.
    ///
    /// On a cell boundary the derivative of the cell to the right is returned.
    /// Inputs strictly outside the grid are clamped and get a zero partial.
    pub fn grad_x(&self, theta: &LatticeParams, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(theta)?;
        self.check_input(x)?;
        let mut grad = vec![0.0; self.dims()];
        self.value_and_grad_x(&theta.0, x, &mut grad);
        Ok(grad)
    }

    /// Evaluates the lattice and writes `∂f/∂x` into `grad`.
    pub(crate) fn value_and_grad_x(&self, theta: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        let segs = self.segments(x);
        let dims = segs.len();
        let base: usize = segs
            .iter()
            .zip(&self.strides)
            .map(|(s, st)| s.left * st)
            .sum();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut factors: DimVec<f64> = SmallVec::from_elem(0.0, dims);
        let mut prefix: DimVec<f64> = SmallVec::from_elem(1.0, dims + 1);
        let mut suffix: DimVec<f64> = SmallVec::from_elem(1.0, dims + 1);
        for mask in 0..(1usize << dims) {
            let mut idx = base;
            for (d, seg) in segs.iter().enumerate() {
                if mask >> d & 1 == 1 {
                    idx += self.strides[d];
                    factors[d] = seg.w_right;
                } else {
                    factors[d] = 1.0 - seg.w_right;
                }
            }
            for d in 0..dims {
                prefix[d + 1] = prefix[d] * factors[d];
            }
            for d in (0..dims).rev() {
                suffix[d] = suffix[d + 1] * factors[d];
            }
            let t = theta[idx];
            for (d, seg) in segs.iter().enumerate() {
                let sign = if mask >> d & 1 == 1 { 1.0 } else { -1.0 };
                grad[d] += sign * seg.slope_scale * prefix[d] * suffix[d + 1] * t;
            }
        }
        self.interpolate(theta, &segs)
    }

    pub(crate) fn check_params(&self, theta: &LatticeParams) -> Result<()> {
        if theta.0.len() != self.size {
            return Err(Error::input(format!(
                "lattice has {} knots but {} parameters were given",
                self.size,
                theta.0.len()
            )));
        }
        Ok(())
    }
}

/// Flattened look-up table values, laid out as documented at module level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeParams(pub Vec<f64>);

impl LatticeParams {
    pub fn new(grid: &Grid, theta: Vec<f64>) -> Result<Self> {
        let params = LatticeParams(theta);
        grid.check_params(&params)?;
        if params.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("lattice parameters must be finite"));
        }
        Ok(params)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        LatticeParams(vec![value; grid.size()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 2);
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}
