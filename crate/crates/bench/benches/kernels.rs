use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use augflow::augmented::{assemble_hybrid, assemble_ulam};
use augflow::spectral::{eigs_augmented, EigsOptions, Mode};
use augflow::stochastic::{escape_estimate, EnsembleSpec, Membership};
use augflow::transport::{rotating_interval_family, Quadrature};
use augflow::fields::rotating_interval;
use augflow::{AugmentedGrid, DoubleGyre};
use augflow_bench::{gyre_partition, gyre_ulam};

fn assembly(c: &mut Criterion) {
    let gyre = DoubleGyre::default();
    let mut g = c.benchmark_group("assemble");
    for (nx, ny) in [(20, 10), (50, 25)] {
        let grid = AugmentedGrid::ulam(gyre_partition(nx, ny), 30, 1.0).unwrap();
        g.bench_with_input(BenchmarkId::new("ulam", nx * ny * 30), &grid, |b, grid| {
            b.iter(|| assemble_ulam(grid, &gyre, 0.1, 4).unwrap())
        });
        let grid = AugmentedGrid::collocation(gyre_partition(nx, ny), 11, 1.0).unwrap();
        g.bench_with_input(BenchmarkId::new("hybrid", nx * ny * 11), &grid, |b, grid| {
            b.iter(|| assemble_hybrid(grid, &gyre, 0.1, 4).unwrap())
        });
    }
    g.finish();
}

fn matvec(c: &mut Criterion) {
    let gen = gyre_ulam(100, 50, 30);
    let x = vec![1.0; gen.n()];
    let mut y = vec![0.0; gen.n()];
    c.bench_function("matvec ulam 150k", |b| b.iter(|| gen.matvec(black_box(&x), &mut y).unwrap()));
}

fn eigensolver(c: &mut Criterion) {
    let gen = gyre_ulam(20, 10, 30);
    let mut g = c.benchmark_group("eigs");
    g.sample_size(10);
    g.bench_function("largest_real 6k", |b| b.iter(|| eigs_augmented(&gen, &EigsOptions::new(6, Mode::LargestReal)).unwrap()));
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let gyre = DoubleGyre::default();
    let inside = |_t: f64, x: &[f64]| x[0] < 1.0;
    let m = Membership::Indicator(&inside);
    let spec = EnsembleSpec::uniform(2000, 1, 1.0 / 30.0, 0.0, 2.0);
    let mut g = c.benchmark_group("escape");
    g.sample_size(10);
    g.bench_function("2000 points, 60 steps", |b| b.iter(|| escape_estimate(&gyre, 0.1, &m, &spec, None).unwrap()));
    g.finish();
}

fn boundary_flux(c: &mut Criterion) {
    let fam = rotating_interval_family();
    let field = rotating_interval();
    c.bench_function("flux rotating interval", |b| {
        b.iter(|| fam.flux_report(&field, Quadrature::new(1, 8), Quadrature::new(32, 8)).unwrap())
    });
}

criterion_group!(benches, assembly, matvec, eigensolver, ensemble, boundary_flux);
criterion_main!(benches);
