mod common;

use common::random_model;
use proptest::prelude::*;
use quantlat::data::{QuantileOracle, SimFamily, SimSpec};
use quantlat::eval::{empirical_rate, harrell_davis, harrell_davis_weights, sample_quantile, QuantilePredictor};
use quantlat::Examples;

proptest! {
    #[test]
    fn sample_quantile_is_a_sample_value(ys in prop::collection::vec(-1e3..1e3f64, 1..80), tau in 0.0..=1.0f64) {
        let q = sample_quantile(&ys, tau).unwrap();
        prop_assert!(ys.contains(&q));
    }

    #[test]
    fn sample_quantile_is_nondecreasing_in_tau(ys in prop::collection::vec(-1e3..1e3f64, 1..80), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sample_quantile(&ys, lo).unwrap() <= sample_quantile(&ys, hi).unwrap());
    }

    #[test]
    fn harrell_davis_weights_sum_to_one(n in 1usize..1000, tau in 0.001..0.999f64) {
        let w = harrell_davis_weights(n, tau).unwrap();
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn harrell_davis_is_affine_equivariant(
        ys in prop::collection::vec(-100.0..100.0f64, 2..60),
        tau in 0.01..0.99f64,
        shift in -50.0..50.0f64,
        scale in 0.01..20.0f64,
    ) {
        let base = harrell_davis(&ys, tau).unwrap();
        let moved: Vec<f64> = ys.iter().map(|y| scale * y + shift).collect();
        let got = harrell_davis(&moved, tau).unwrap();
        prop_assert!((got - (scale * base + shift)).abs() < 1e-8 * (1.0 + got.abs()));
        let flipped: Vec<f64> = ys.iter().map(|y| -y).collect();
        let mirrored = harrell_davis(&flipped, 1.0 - tau).unwrap();
        prop_assert!((mirrored + base).abs() < 1e-8 * (1.0 + base.abs()));
    }

    #[test]
    fn rates_are_nondecreasing_for_non_crossing_models(seed in 0u64..10_000, a in 0.01..0.99f64, b in 0.01..0.99f64) {
        let model = random_model(2, 3, false, seed);
        let xs = common::random_points(2, 200, seed);
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[1] + (x[0] * 37.0).sin()).collect();
        let data = Examples::new(xs, ys).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(empirical_rate(&model, &data, lo).unwrap() <= empirical_rate(&model, &data, hi).unwrap());
    }
}

#[test]
fn harrell_davis_three_point_example() {
    assert!((harrell_davis(&[0.0, 0.0, 1.0], 0.5).unwrap() - 7.0 / 27.0).abs() < 1e-9);
}

/// Predicts the simulator's true conditional quantile.
struct Truth(SimSpec);

impl QuantilePredictor for Truth {
    fn predict_quantile(&self, x: &[f64], tau: f64) -> quantlat::Result<f64> {
        Ok(self.0.true_quantile(x, tau))
    }
}

#[test]
fn true_quantiles_have_calibrated_rates() {
    let spec = SimSpec { family: SimFamily::SineSkew { a: 1.0, b: 7.0 }, n: 40_000, seed: 8, noise_scale: 1.0 };
    let data = spec.generate().unwrap();
    let ex = Examples::new(data.rows.clone(), data.labels.clone()).unwrap();
    let truth = Truth(spec.clone());
    let bound = 2.0 / (spec.n as f64).sqrt();
    for tau in [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95] {
        let r = empirical_rate(&truth, &ex, tau).unwrap();
        assert!((r - tau).abs() < bound, "tau {tau}: rate {r}");
    }
}
