use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quantlat::lattice::project_monotone;
use quantlat_bench::{random_lattice, random_points};
use std::hint::black_box;

fn evaluate(c: &mut Criterion) {
    let mut g = c.benchmark_group("lattice_evaluate");
    for dims in [2, 4, 6] {
        let (grid, theta, _) = random_lattice(dims, 3, 1);
        let xs = random_points(dims, 256, 2);
        g.bench_with_input(BenchmarkId::from_parameter(dims), &dims, |b, _| {
            b.iter(|| xs.iter().map(|x| grid.evaluate(&theta, x).unwrap()).sum::<f64>())
        });
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("lattice_grad");
    for dims in [2, 4, 6] {
        let (grid, theta, _) = random_lattice(dims, 3, 1);
        let xs = random_points(dims, 256, 2);
        g.bench_with_input(BenchmarkId::new("theta", dims), &dims, |b, _| {
            b.iter(|| xs.iter().map(|x| grid.grad_theta(x).unwrap().len()).sum::<usize>())
        });
        g.bench_with_input(BenchmarkId::new("x", dims), &dims, |b, _| {
            b.iter(|| xs.iter().map(|x| grid.grad_x(&theta, x).unwrap()[0]).sum::<f64>())
        });
    }
    g.finish();
}

fn projection(c: &mut Criterion) {
    let mut g = c.benchmark_group("lattice_projection");
    g.sample_size(20);
    for (dims, knots) in [(2, 5), (3, 4), (4, 3), (5, 3)] {
        let (grid, theta, spec) = random_lattice(dims, knots, 3);
        g.bench_function(format!("{dims}d_{knots}k"), |b| {
            b.iter(|| project_monotone(black_box(&theta), &grid, &spec, 1e-9).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, evaluate, gradients, projection);
criterion_main!(benches);
