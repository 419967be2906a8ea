mod common;

use std::collections::BTreeMap;

use common::{central_diff, random_model, random_points, rel_err};
use proptest::prelude::*;
use quantlat::eval::{crossing_rate, percentile_grid};
use quantlat::QuantileModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pulls calibrator outputs off the `[0, 1]` boundary so that small
/// parameter perturbations never hit the lattice clamp.
fn interior(model: &QuantileModel) -> QuantileModel {
    let layout = model.layout();
    let mut p = model.params();
    for (k, &off) in layout.calibrators.iter().enumerate() {
        let len = model.config().features[k].keypoints;
        for v in &mut p[off..off + len] {
            *v = 0.05 + 0.9 * *v;
        }
    }
    let mut m = model.clone();
    m.set_params(&p).unwrap();
    m
}

/// True when some parameter has different left and right derivatives at
/// the current point, i.e. an interpolation input sits on a knot.
fn at_kink(f: &dyn Fn(&[f64]) -> f64, p: &[f64]) -> bool {
    let h = 1e-6;
    let f0 = f(p);
    (0..p.len()).any(|i| {
        let mut q = p.to_vec();
        q[i] += h;
        let right = (f(&q) - f0) / h;
        q[i] -= 2.0 * h;
        let left = (f0 - f(&q)) / h;
        (left - right).abs() > 1e-6
    })
}

#[test]
fn forward_with_grad_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0u64;
    while checked < 100 {
        let case = checked;
        let model = interior(&random_model(1 + (case % 3) as usize, 2 + (case % 2) as usize, case % 2 == 0, case));
        let x: Vec<f64> = (0..model.num_features()).map(|_| rng.random_range(0.02..0.98)).collect();
        let tau = rng.random_range(0.05..0.95);
        let p = model.params();
        let f = |q: &[f64]| {
            let mut m = model.clone();
            m.set_params(q).unwrap();
            m.predict(&x, tau).unwrap()
        };
        if at_kink(&f, &p) {
            continue;
        }
        let (v, g) = model.forward_with_grad(&x, tau).unwrap();
        assert!((v - model.predict(&x, tau).unwrap()).abs() < 1e-12);
        for i in 0..p.len() {
            let fd = central_diff(f, &p, i, 1e-6);
            assert!(rel_err(g[i], fd) < 1e-5, "case {case} param {i}: {} vs {fd}", g[i]);
        }
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projected_models_never_cross(seed in 0u64..10_000, dims in 1usize..4) {
        let model = random_model(dims, 3, false, seed);
        prop_assert_eq!(model.constraint_violation(), 0.0);
        let xs = random_points(dims, 50, seed);
        prop_assert_eq!(crossing_rate(&model, &xs, &percentile_grid()).unwrap(), 0.0);
    }

    #[test]
    fn monotone_features_are_monotone(seed in 0u64..10_000, dims in 1usize..4, t in 0.01..0.99f64, bump in 0.0..1.0f64) {
        let model = random_model(dims, 3, true, seed);
        for x in random_points(dims, 20, seed + 1) {
            for d in 0..dims {
                let mut y = x.clone();
                y[d] = (y[d] + bump).min(1.0);
                prop_assert!(model.predict(&x, t).unwrap() <= model.predict(&y, t).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn two_tau_knots_give_location_scale_family(seed in 0u64..10_000, dims in 1usize..4) {
        let model = random_model(dims, 2, false, seed);
        let xs = random_points(dims, 10, seed);
        let taus: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        let r = model.location_scale_residual(&xs, &taus).unwrap();
        prop_assert!(r.residual < 1e-9, "residual {}", r.residual);
    }

    #[test]
    fn serialization_round_trips(seed in 0u64..10_000, dims in 1usize..4) {
        let model = random_model(dims, 3, seed % 2 == 0, seed);
        let meta: BTreeMap<String, String> = [("seed".to_string(), seed.to_string())].into();
        let text = model.to_json(&meta).unwrap();
        let (back, meta_back) = QuantileModel::from_json(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(meta_back, meta);
        prop_assert_eq!(back.to_json(&BTreeMap::from([("seed".to_string(), seed.to_string())])).unwrap(), text);
    }
}


/// Nearly flat τ structure is where rounding could create tiny dips.
#[test]
fn nearly_flat_curves_never_cross() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let taus = percentile_grid();
    for seed in 0..300u64 {
        let model = random_model(1 + (seed % 3) as usize, 2 + (seed % 3) as usize, false, seed);
        let layout = model.layout();
        let mut p = model.params();
        let tau_len = model.tau_calibrator().len();
        let level = rng.random_range(0.2..0.8);
        for v in &mut p[layout.tau_calibrator + 1..layout.tau_calibrator + tau_len - 1] {
            *v = level + rng.random_range(0.0..1e-15);
        }
        let lat_end = layout.weights;
        for v in &mut p[layout.lattices[0]..lat_end] {
            *v = 1.0 + rng.random_range(0.0..1e-14);
        }
        let mut m = model.clone();
        m.set_params(&p).unwrap();
        let m = m.project(1e-9).unwrap();
        let xs = random_points(m.num_features(), 30, seed);
        assert_eq!(crossing_rate(&m, &xs, &taus).unwrap(), 0.0, "seed {seed}");
    }
}
