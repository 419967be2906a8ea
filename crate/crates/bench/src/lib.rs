//! Shared fixtures for the criterion benchmarks in `benches/`.

use quantlat::{Grid, LatticeParams, MonotoneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unit grid with `knots` per dimension, random parameters and every
/// dimension marked monotone.
pub fn random_lattice(dims: usize, knots: usize, seed: u64) -> (Grid, LatticeParams, MonotoneSpec) {
    let grid = Grid::unit(&vec![knots; dims]).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..grid.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params = LatticeParams::new(&grid, theta).expect("matching size");
    (grid, params, MonotoneSpec::new((0..dims).collect()))
}

/// `n` points in the unit cube.
pub fn random_points(dims: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dims).map(|_| rng.random::<f64>()).collect()).collect()
}
