use proptest::prelude::*;
use quantlat::data::{
    load_csv, read_sidecar, sample_exponential, split, write_csv, write_sidecar, ColumnSpec, QuantileOracle,
    SimFamily, SimSpec, SplitMode,
};
use quantlat::eval::sample_quantile;
use quantlat::{Dataset, Schema};

fn families() -> Vec<SimFamily> {
    vec![
        SimFamily::SineSkew { a: 1.0, b: 7.0 },
        SimFamily::SineSkew { a: 7.0, b: 7.0 },
        SimFamily::Griewank,
        SimFamily::Michalewicz,
        SimFamily::Ackley,
    ]
}

/// Pooled standardized noise `(y − m(x)) / s(x)` is i.i.d. across `x`, so its
/// empirical quantiles must match the closed form.
#[test]
fn simulated_noise_matches_closed_form_quantiles() {
    for family in families() {
        let spec = SimSpec { family: family.clone(), n: 1_000_000, seed: 3, noise_scale: 1.0 };
        let data = spec.generate().unwrap();
        let z: Vec<f64> = data
            .rows
            .iter()
            .zip(&data.labels)
            .map(|(x, y)| (y - spec.family.mean(x)) / spec.noise_modulation(x))
            .collect();
        let probe = &data.rows[0];
        let s = spec.noise_modulation(probe);
        for tau in [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            let want = spec.noise_quantile(probe, tau) / s;
            let got = sample_quantile(&z, tau).unwrap();
            let (a, b) = spec.family.skew();
            assert!((got - want).abs() < 0.01 * a.max(b), "{family:?} tau {tau}: {got} vs {want}");
        }
    }
}

#[test]
fn exponential_draws_have_the_right_mean() {
    let (s, _) = sample_exponential(2.0, 1_000_000, 5).unwrap();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    // Standard error is 0.5 / 1000.
    assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
}

#[test]
fn ackley_has_nine_columns() {
    let d = SimSpec { family: SimFamily::Ackley, n: 10, seed: 0, noise_scale: 1.0 }.generate().unwrap();
    assert_eq!(d.schema.columns.len(), 9);
    assert!(d.rows.iter().all(|r| r.len() == 9 && r.iter().all(|v| (-5.0..=5.0).contains(v))));
}

#[test]
fn generation_is_deterministic() {
    let spec = SimSpec { family: SimFamily::Griewank, n: 500, seed: 12, noise_scale: 0.5 };
    assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
    let other = SimSpec { seed: 13, ..spec.clone() };
    assert_ne!(spec.generate().unwrap().labels, other.generate().unwrap().labels);
}

#[test]
fn csv_and_sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    let spec = SimSpec { family: SimFamily::SineSkew { a: 1.0, b: 3.0 }, n: 50, seed: 1, noise_scale: 1.0 };
    let data = spec.generate().unwrap();
    write_csv(&path, &data).unwrap();
    write_sidecar(&path, &spec).unwrap();
    let back = load_csv(&path, &spec.schema()).unwrap();
    assert_eq!(back.rows, data.rows);
    assert_eq!(back.labels, data.labels);
    assert_eq!(read_sidecar(&path).unwrap(), Some(spec));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn true_quantiles_are_nondecreasing_in_tau(which in 0usize..5, seed in 0u64..1000, a in 0.001..0.999f64, b in 0.001..0.999f64) {
        let spec = SimSpec { family: families()[which].clone(), n: 1, seed, noise_scale: 1.0 };
        let x = &spec.generate().unwrap().rows[0];
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(spec.true_quantile(x, lo) <= spec.true_quantile(x, hi));
    }

    #[test]
    fn splits_partition_the_rows(n in 3usize..200, seed in 0u64..1000, f0 in 0.2..0.6f64, f1 in 0.1..0.3f64) {
        let schema = Schema { columns: vec![ColumnSpec::continuous("x")], label: "y".into() };
        let data = Dataset::new(schema, (0..n).map(|i| vec![i as f64]).collect(), (0..n).map(|i| i as f64).collect()).unwrap();
        let fractions = [f0, f1, 1.0 - f0 - f1];
        for mode in [SplitMode::Iid { fractions, seed }, SplitMode::Ordered { fractions }] {
            let Ok((a, b, c)) = split(&data, &mode) else { continue };
            let mut all: Vec<f64> = a.labels.iter().chain(&b.labels).chain(&c.labels).copied().collect();
            all.sort_by(f64::total_cmp);
            prop_assert_eq!(all, data.labels.clone());
        }
    }
}
