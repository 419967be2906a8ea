//! Euclidean projection of lattice parameters onto monotonicity constraints.
//!
//! Monotonicity in dimension `d` means every pair of neighboring knots along
//! `d` satisfies `θ[i] <= θ[i + stride_d]`. For a single dimension the
//! constraint set splits into independent chains, each projected exactly by
//! pool-adjacent-violators. Several dimensions are combined with Dykstra's
//! alternating projections; a final running-maximum pass along each
//! constrained dimension removes the sub-tolerance residual so the output is
//! exactly feasible.

use serde::{Deserialize, Serialize};

use super::{Grid, LatticeParams};
use crate::error::{Error, Result};

/// Lattice dimensions (0-based) required to be nondecreasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneSpec {
    pub dims: Vec<usize>,
}

impl MonotoneSpec {
    pub fn new(mut dims: Vec<usize>) -> Self {
        dims.sort_unstable();
        dims.dedup();
        MonotoneSpec { dims }
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        match self.dims.iter().find(|&&d| d >= grid.dims()) {
            Some(d) => Err(Error::input(format!(
                "monotone dimension {d} out of range for a {}-D lattice",
                grid.dims()
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            tol: 1e-9,
            max_sweeps: 1000,
        }
    }
}

/// Result of [`check_monotone`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCheck {
    pub satisfied: bool,
    /// Largest `θ[lower] - θ[upper]` over constrained neighbor pairs, floored at 0.
    pub worst_violation: f64,
    /// Flat indices `(lower, upper)` of the most violated pair, if any pair is violated.
    pub worst_pair: Option<(usize, usize)>,
}

/// In-place isotonic (nondecreasing) least-squares fit with unit weights.
///
/// The written values are the block means that were compared while pooling,
/// so the output is nondecreasing exactly, not just up to rounding.
pub fn pav_nondecreasing(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    // (sum, count) per block
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let mut i = 0;
    for (s, n) in blocks {
        let mean = s / n as f64;
        values[i..i + n].iter_mut().for_each(|v| *v = mean);
        i += n;
    }
}

/// Calls `f` with the flat indices of every chain along `dim`.
fn for_each_chain(grid: &Grid, dim: usize, mut f: impl FnMut(&[usize])) {
    let stride = grid.stride(dim);
    let len = grid.num_knots(dim);
    let mut chain = vec![0usize; len];
    for start in 0..grid.size() {
        if (start / stride) % len != 0 {
            continue;
        }
        for (k, slot) in chain.iter_mut().enumerate() {
            *slot = start + k * stride;
        }
        f(&chain);
    }
}

fn project_chains(theta: &mut [f64], grid: &Grid, dim: usize) {
    let mut buf = Vec::with_capacity(grid.num_knots(dim));
    for_each_chain(grid, dim, |chain| {
        buf.clear();
        buf.extend(chain.iter().map(|&i| theta[i]));
        pav_nondecreasing(&mut buf);
        for (&i, &v) in chain.iter().zip(&buf) {
            theta[i] = v;
        }
    });
}

fn running_max(theta: &mut [f64], grid: &Grid, dim: usize) {
    for_each_chain(grid, dim, |chain| {
        for w in chain.windows(2) {
            if theta[w[1]] < theta[w[0]] {
                theta[w[1]] = theta[w[0]];
            }
        }
    });
}

fn worst_violation(theta: &[f64], grid: &Grid, spec: &MonotoneSpec) -> (f64, Option<(usize, usize)>) {
    let mut worst = 0.0;
    let mut pair = None;
    for &d in &spec.dims {
        for_each_chain(grid, d, |chain| {
            for w in chain.windows(2) {
                let v = theta[w[0]] - theta[w[1]];
                if v > worst {
                    worst = v;
                    pair = Some((w[0], w[1]));
                }
            }
        });
    }
    (worst, pair)
}

pub fn check_monotone(theta: &LatticeParams, grid: &Grid, spec: &MonotoneSpec, tol: f64) -> Result<MonotoneCheck> {
    grid.check_params(theta)?;
    spec.validate(grid)?;
    let (worst, pair) = worst_violation(&theta.0, grid, spec);
    Ok(MonotoneCheck {
        satisfied: worst <= tol,
        worst_violation: worst,
        worst_pair: pair,
    })
}

/// Projection with the default sweep budget.
pub fn project_monotone(theta: &LatticeParams, grid: &Grid, spec: &MonotoneSpec, tol: f64) -> Result<LatticeParams> {
    project_monotone_with(
        theta,
        grid,
        spec,
        ProjectionOptions {
            tol,
            ..ProjectionOptions::default()
        },
    )
}

pub fn project_monotone_with(
    theta: &LatticeParams,
    grid: &Grid,
    spec: &MonotoneSpec,
    opts: ProjectionOptions,
) -> Result<LatticeParams> {
    grid.check_params(theta)?;
    spec.validate(grid)?;
    if !(opts.tol > 0.0) {
        return Err(Error::input("projection tolerance must be positive"));
    }
    let mut x = theta.0.clone();
    match spec.dims.as_slice() {
        [] => return Ok(LatticeParams(x)),
        [d] => {
            project_chains(&mut x, grid, *d);
            return Ok(LatticeParams(x));
        }
        _ => {}
    }

    let mut increments = vec![vec![0.0; x.len()]; spec.dims.len()];
    let mut y = vec![0.0; x.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        let mut change: f64 = 0.0;
        for (k, &d) in spec.dims.iter().enumerate() {
            let p = &mut increments[k];
            for i in 0..x.len() {
                y[i] = x[i] + p[i];
            }
            let before = x.clone();
            x.copy_from_slice(&y);
            project_chains(&mut x, grid, d);
            for i in 0..x.len() {
                p[i] = y[i] - x[i];
                change = change.max((x[i] - before[i]).abs());
            }
        }
        let (viol, _) = worst_violation(&x, grid, spec);
        residual = change.max(viol);
        if residual <= opts.tol {
            for &d in &spec.dims {
                running_max(&mut x, grid, d);
            }
            return Ok(LatticeParams(x));
        }
    }
    Err(Error::numerical(
        format!("monotone projection did not converge in {} sweeps", opts.max_sweeps),
        residual,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pav_averages_inverted_pair() {
        let mut v = [1.0, 0.0];
        pav_nondecreasing(&mut v);
        assert_eq!(v, [0.5, 0.5]);
        let mut v = [3.0, 1.0, 2.0, 5.0, 4.0];
        pav_nondecreasing(&mut v);
        assert_eq!(v, [2.0, 2.0, 2.0, 4.5, 4.5]);
    }

    #[test]
    fn one_dim_inverted_pair() {
        let g = Grid::unit(&[2]).unwrap();
        let p = project_monotone(&LatticeParams(vec![1.0, 0.0]), &g, &MonotoneSpec::new(vec![0]), 1e-9).unwrap();
        assert_eq!(p.0, vec![0.5, 0.5]);
    }

    #[test]
    fn feasible_input_is_unchanged() {
        let g = Grid::unit(&[3, 2]).unwrap();
        let theta = LatticeParams(vec![0.0, 1.0, 2.0, 1.0, 1.5, 3.0]);
        let spec = MonotoneSpec::new(vec![0, 1]);
        assert_eq!(project_monotone(&theta, &g, &spec, 1e-9).unwrap(), theta);
    }

    #[test]
    fn check_reports_worst_pair() {
        let g = Grid::unit(&[2]).unwrap();
        let spec = MonotoneSpec::new(vec![0]);
        let ok = check_monotone(&LatticeParams(vec![0.0, 1.0]), &g, &spec, 0.0).unwrap();
        assert!(ok.satisfied);
        assert_eq!(ok.worst_violation, 0.0);
        let bad = check_monotone(&LatticeParams(vec![1.0, 0.0]), &g, &spec, 0.0).unwrap();
        assert!(!bad.satisfied);
        assert_eq!(bad.worst_violation, 1.0);
        assert_eq!(bad.worst_pair, Some((0, 1)));
    }

    #[test]
    fn only_the_requested_dimension_is_constrained() {
        // 2x2, monotone along dim 1 only: pairs (0,2) and (1,3)
        let g = Grid::unit(&[2, 2]).unwrap();
        let theta = LatticeParams(vec![5.0, 0.0, 1.0, 2.0]);
        let p = project_monotone(&theta, &g, &MonotoneSpec::new(vec![1]), 1e-9).unwrap();
        assert_eq!(p.0, vec![3.0, 0.0, 3.0, 2.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = Grid::unit(&[2]).unwrap();
        let theta = LatticeParams(vec![0.0, 1.0]);
        assert!(project_monotone(&theta, &g, &MonotoneSpec::new(vec![1]), 1e-9).is_err());
        assert!(project_monotone(&theta, &g, &MonotoneSpec::new(vec![0]), 0.0).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let g = Grid::unit(&[3, 3]).unwrap();
        let theta = LatticeParams((0..9).map(|i| ((i * 7) % 5) as f64).rev().collect());
        let err = project_monotone_with(
            &theta,
            &g,
            &MonotoneSpec::new(vec![0, 1]),
            ProjectionOptions { tol: 1e-300, max_sweeps: 1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { residual, .. } if residual > 0.0));
    }
}
