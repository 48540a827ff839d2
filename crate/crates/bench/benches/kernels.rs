use std::f64::consts::TAU;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use malab_core::{
    complex_hessian, evolve, ma_density, solve_exponential, Density, FlowOptions, FlowProblem, ForcingSpec,
    FormFamily, HermitianForm, ScalarField, TorusGrid,
};

fn potential(grid: TorusGrid) -> ScalarField {
    ScalarField::from_fn(grid, |x| 0.02 * (TAU * x[0]).sin() * (TAU * x[1]).cos()).unwrap()
}

fn density(grid: TorusGrid) -> Density {
    let raw = ScalarField::from_fn(grid, |x| (0.3 * (TAU * x[0]).sin()).exp()).unwrap();
    let mean = raw.mean();
    Density::new(raw.scale(1.0 / mean), 2.0).unwrap()
}

fn grids() -> [TorusGrid; 3] {
    [
        TorusGrid::new(1, 64).unwrap(),
        TorusGrid::new(1, 128).unwrap(),
        TorusGrid::new(2, 16).unwrap(),
    ]
}

fn label(grid: &TorusGrid) -> String {
    format!("n{}_r{}", grid.n_complex(), grid.resolution())
}

fn bench_hessian(c: &mut Criterion) {
    let mut group = c.benchmark_group("complex_hessian");
    for grid in grids() {
        let phi = potential(grid);
        group.bench_with_input(BenchmarkId::from_parameter(label(&grid)), &phi, |b, phi| {
            b.iter(|| complex_hessian(black_box(phi)))
        });
    }
    group.finish();
}

fn bench_ma_density(c: &mut Criterion) {
    let mut group = c.benchmark_group("ma_density");
    for grid in grids() {
        let phi = potential(grid);
        let theta = HermitianForm::identity(grid.n_complex());
        group.bench_with_input(BenchmarkId::from_parameter(label(&grid)), &phi, |b, phi| {
            b.iter(|| ma_density(&theta, black_box(phi)).unwrap())
        });
    }
    group.finish();
}

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_exponential");
    group.sample_size(10);
    for grid in grids() {
        let f = density(grid);
        let theta = HermitianForm::identity(grid.n_complex());
        let tol = malab_core::default_tolerance(grid.n_complex());
        group.bench_with_input(BenchmarkId::from_parameter(label(&grid)), &f, |b, f| {
            b.iter(|| solve_exponential(&theta, black_box(f), tol).unwrap())
        });
    }
    group.finish();
}

fn bench_flow(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolve_t1");
    group.sample_size(10);
    let grid = TorusGrid::new(1, 32).unwrap();
    let problem = FlowProblem::new(
        FormFamily::constant(HermitianForm::identity(1)),
        ForcingSpec::LinearR { alpha: 1.0 },
        density(grid),
    )
    .unwrap();
    let phi0 = potential(grid);
    let mut opts = FlowOptions::new(1.0, 1e-3);
    opts.snapshots = 10;
    group.bench_function(label(&grid), |b| b.iter(|| evolve(&problem, black_box(&phi0), &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_hessian, bench_ma_density, bench_solve, bench_flow);
criterion_main!(benches);
