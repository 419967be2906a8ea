mod common;

use common::{central_diff, random_model, random_points, rel_err};
use proptest::prelude::*;
use quantlat::eval::sample_quantile;
use quantlat::loss::{expected_pinball_batch, pinball_batch_with_taus};
use quantlat::{pinball, Examples, TauDistribution, TauSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

fn mean_pinball(ys: &[f64], c: f64, tau: f64) -> f64 {
    ys.iter().map(|y| pinball(*y, c, tau).unwrap()).sum::<f64>() / ys.len() as f64
}

proptest! {
    #[test]
    fn pinball_is_convex_in_prediction(
        y in -10.0..10.0f64, a in -10.0..10.0f64, b in -10.0..10.0f64,
        lam in 0.0..=1.0f64, tau in 0.01..0.99f64,
    ) {
        let mid = lam * a + (1.0 - lam) * b;
        let lhs = pinball(y, mid, tau).unwrap();
        let rhs = lam * pinball(y, a, tau).unwrap() + (1.0 - lam) * pinball(y, b, tau).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn sample_quantile_minimizes_mean_pinball(
        ys in prop::collection::vec(-100.0..100.0f64, 1..60),
        tau in 0.01..0.99f64,
        probe in -120.0..120.0f64,
    ) {
        let q = sample_quantile(&ys, tau).unwrap();
        prop_assert!(mean_pinball(&ys, q, tau) <= mean_pinball(&ys, probe, tau) + 1e-9);
        for y in &ys {
            prop_assert!(mean_pinball(&ys, q, tau) <= mean_pinball(&ys, *y, tau) + 1e-9);
        }
    }

    #[test]
    fn pinball_is_nonnegative_and_zero_on_target(y in -1e6..1e6f64, tau in 0.001..0.999f64) {
        prop_assert_eq!(pinball(y, y, tau).unwrap(), 0.0);
        prop_assert!(pinball(y, y + 1.0, tau).unwrap() > 0.0);
    }
}

#[test]
fn beta_mode_half_with_concentration_two_is_uniform() {
    let sampler = TauSampler::new(&TauDistribution::BetaMode { mode: 0.5, concentration: 2.0 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draws: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let law = Beta::new(1.0, 1.0).unwrap();
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let c = law.cdf(*t);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks <= 0.01, "KS distance {ks}");
}

#[test]
fn concentrated_beta_peaks_at_its_mode() {
    let sampler = TauSampler::new(&TauDistribution::BetaMode { mode: 0.9, concentration: 1000.0 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bins = 500;
    let mut hist = vec![0usize; bins];
    for _ in 0..1_000_000 {
        let t = sampler.sample(&mut rng);
        hist[((t * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let peak = hist.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
    let mode = (peak as f64 + 0.5) / bins as f64;
    assert!(mode > 0.88 && mode < 0.92, "histogram mode {mode}");
}

fn batch_data(dims: usize, n: usize, seed: u64) -> Examples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = random_points(dims, n, seed);
    let ys = xs.iter().map(|x| x.iter().sum::<f64>() + rng.random_range(-2.0..2.0)).collect();
    Examples::new(xs, ys).unwrap()
}

#[test]
fn batch_loss_gradients_match_finite_differences() {
    let (mut checked, mut total) = (0, 0);
    for seed in 0..20u64 {
        let dims = 1 + (seed % 3) as usize;
        let model = random_model(dims, 3, seed % 2 == 1, seed);
        let data = batch_data(dims, 12, seed);
        let batch: Vec<usize> = (0..12).collect();
        let sampler = TauSampler::new(&TauDistribution::Uniform).unwrap();
        let loss_at = |q: &[f64]| {
            let mut m = model.clone();
            m.set_params(q).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            expected_pinball_batch(&m, &data, &batch, &sampler, &mut rng).unwrap().0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (loss, grad) = expected_pinball_batch(&model, &data, &batch, &sampler, &mut rng).unwrap();
        let p = model.params();
        assert!((loss - loss_at(&p)).abs() < 1e-12);
        for i in 0..p.len() {
            let (h, fd) = (1e-7, central_diff(loss_at, &p, i, 1e-7));
            // Skip coordinates where a residual changes sign inside the step.
            let right = (loss_at(&{ let mut q = p.clone(); q[i] += h; q }) - loss) / h;
            let left = (loss - loss_at(&{ let mut q = p.clone(); q[i] -= h; q })) / h;
            total += 1;
            if (left - right).abs() > 1e-6 {
                continue;
            }
            assert!(rel_err(grad[i], fd) < 1e-5, "seed {seed} param {i}: {} vs {fd}", grad[i]);
            checked += 1;
        }
    }
    assert!(2 * checked >= total, "only {checked} of {total} coordinates were smooth");
}

#[test]
fn fixed_tau_batch_averages_pointwise_subgradients() {
    let model = random_model(2, 3, false, 5);
    let data = batch_data(2, 8, 5);
    let batch = [0, 2, 4, 6];
    let taus = [0.1, 0.4, 0.6, 0.95];
    let (loss, grad) = pinball_batch_with_taus(&model, &data, &batch, &taus).unwrap();
    let mut want_loss = 0.0;
    let mut want = vec![0.0; grad.len()];
    for (&i, &t) in batch.iter().zip(&taus) {
        let (f, g) = model.forward_with_grad(data.x(i), t).unwrap();
        want_loss += pinball(data.y(i), f, t).unwrap() / 4.0;
        let s = if data.y(i) > f { -t } else { 1.0 - t };
        for (w, gi) in want.iter_mut().zip(&g) {
            *w += s * gi / 4.0;
        }
    }
    assert!((loss - want_loss).abs() < 1e-12);
    for (a, b) in grad.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}
