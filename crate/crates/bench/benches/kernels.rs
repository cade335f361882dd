use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kinetic_bench::{base_solver, density};
use kinetic_core::kl::{nystrom_eig, CovarianceKernel};
use kinetic_core::poisson::solve_poisson_neumann;
use kinetic_core::SlabMesh;

fn strang_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("strang_step");
    for (nx, n) in [(16, 16), (32, 32), (64, 64)] {
        let (solver, state) = base_solver(nx, n).expect("pinned config");
        g.bench_with_input(BenchmarkId::from_parameter(format!("{nx}x{n}")), &state, |b, s| {
            let mut st = s.clone();
            b.iter(|| solver.step(black_box(&mut st)).expect("finite"));
        });
    }
    g.finish();
}

fn collision_apply(c: &mut Criterion) {
    let mut g = c.benchmark_group("collision_apply");
    for n in [16, 64, 256] {
        let (solver, state) = base_solver(4, n).expect("pinned config");
        let cell = state.f[..n].to_vec();
        let mut out = vec![0.0; n];
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| solver.kernel.apply_into(black_box(&cell), &mut out))
        });
    }
    g.finish();
}

fn poisson(c: &mut Criterion) {
    let mut g = c.benchmark_group("poisson_neumann");
    for nx in [64, 1024, 16384] {
        let mesh = SlabMesh::new(nx, 1.0).expect("mesh");
        let rho = density(nx);
        g.bench_function(BenchmarkId::from_parameter(nx), |b| {
            b.iter(|| solve_poisson_neumann(black_box(&rho), &mesh).expect("compatible"))
        });
    }
    g.finish();
}

fn nystrom(c: &mut Criterion) {
    let mut g = c.benchmark_group("nystrom_brownian");
    g.sample_size(10);
    for n in [128, 512] {
        let k = CovarianceKernel::brownian(1.0);
        g.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| nystrom_eig(black_box(&k), n).expect("psd")));
    }
    g.finish();
}

criterion_group!(benches, strang_step, collision_apply, poisson, nystrom);
criterion_main!(benches);
