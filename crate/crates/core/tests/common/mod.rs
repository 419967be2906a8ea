//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use quantlat::lattice::{Grid, MonotoneSpec};
use quantlat::model::{FeatureSpec, LatticeSpec, ModelConfig, QuantileModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neighbor pairs `(lower, upper)` constrained by `spec`, enumerated directly
/// from grid coordinates.
pub fn monotone_pairs(grid: &Grid, spec: &MonotoneSpec) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for flat in 0..grid.size() {
        let c = grid.coords(flat);
        for &d in &spec.dims {
            if c[d] + 1 < grid.num_knots(d) {
                let mut up = c.clone();
                up[d] += 1;
                pairs.push((flat, grid.flat_index(&up)));
            }
        }
    }
    pairs
}

/// Exact Euclidean projection onto `{θ : θ_lo ≤ θ_hi for every pair}` by
/// enumerating active sets. Each candidate is the projection onto the
/// subspace where the chosen constraints hold with equality; the closest
/// feasible candidate is the projection. Exponential in the number of pairs,
/// so only for tiny lattices.
pub fn brute_force_projection(v: &[f64], pairs: &[(usize, usize)]) -> Vec<f64> {
    let n = v.len();
    let m = pairs.len();
    assert!(m <= 16, "too many constraints for enumeration");
    let vv = DVector::from_column_slice(v);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<&(usize, usize)> = (0..m).filter(|k| mask >> k & 1 == 1).map(|k| &pairs[k]).collect();
        let cand = if active.is_empty() {
            vv.clone()
        } else {
            let mut a = DMatrix::zeros(active.len(), n);
            for (r, &&(lo, hi)) in active.iter().enumerate() {
                a[(r, lo)] = 1.0;
                a[(r, hi)] = -1.0;
            }
            let aat = &a * a.transpose();
            let pinv = aat.pseudo_inverse(1e-12).expect("pseudo-inverse");
            &vv - a.transpose() * (pinv * (&a * &vv))
        };
        if pairs.iter().all(|&(lo, hi)| cand[lo] - cand[hi] <= 1e-10) {
            let d = (&cand - &vv).norm_squared();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, cand.iter().copied().collect()));
            }
        }
    }
    best.expect("the constant vector is always feasible").1
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Relative error that falls back to absolute error near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// A projected model over `dims` continuous features on `[0, 1]` with
/// random parameters, optionally monotone in every feature.
pub fn random_model(dims: usize, tau_knots: usize, monotone: bool, seed: u64) -> QuantileModel {
    let features: Vec<FeatureSpec> = (0..dims)
        .map(|i| {
            FeatureSpec::continuous(format!("x{i}"), 0.0, 1.0)
                .with_keypoints(4)
                .with_monotone(monotone)
        })
        .collect();
    let config = ModelConfig {
        ensemble: if dims > 1 {
            vec![
                LatticeSpec { features: vec!["x0".into()], knots: 3 },
                LatticeSpec { features: features[1..].iter().map(|f| f.name.clone()).collect(), knots: 2 },
            ]
        } else {
            Vec::new()
        },
        features,
        tau_knots,
        tau_calibrator_keypoints: 5,
        output_range: Some([-2.0, 3.0]),
        ..ModelConfig::default()
    };
    let mut model = QuantileModel::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let p: Vec<f64> = model.params().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    model.set_params(&p).unwrap();
    model.project(1e-9).unwrap()
}

/// Uniform points in `[0, 1]^dims`.
pub fn random_points(dims: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dims).map(|_| rng.random::<f64>()).collect()).collect()
}
