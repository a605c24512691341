use std::hint::black_box;

use collapse_bench::{pixel_inputs, power_law};
use collapse_core::linalg::standard_normal_vector;
use collapse_core::theory::solve_kappa;
use collapse_core::{fit_krr, gram, run_chain, ChainConfig, DesignMode, Kernel};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kappa(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_kappa");
    for &d in &[100usize, 10_000] {
        let (s, _) = power_law(d);
        group.bench_with_input(BenchmarkId::from_parameter(d), &s, |b, s| {
            b.iter(|| solve_kappa(black_box(1e-4), 1000, s).unwrap())
        });
    }
    group.finish();
}

fn chain(c: &mut Criterion) {
    let (s, g) = power_law(100);
    let mut group = c.benchmark_group("run_chain");
    group.sample_size(20);
    for mode in [DesignMode::Shared, DesignMode::Independent] {
        let cfg = ChainConfig::uniform(3, 200, 1.0, mode, 7);
        group.bench_function(mode.as_str(), |b| {
            b.iter(|| run_chain(black_box(&cfg), &s, &g).unwrap())
        });
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let x = pixel_inputs(500, 784, 1);
    let kernel = Kernel::Rbf { bandwidth: 1e-4 };
    let y = standard_normal_vector(500, &mut ChaCha8Rng::seed_from_u64(2));
    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    group.bench_function("gram_500x784", |b| b.iter(|| gram(&kernel, black_box(&x), &x).unwrap()));
    group.bench_function("fit_krr_500", |b| {
        b.iter(|| fit_krr(&kernel, black_box(&x), &y, 1e-3).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kappa, chain, kernels);
criterion_main!(benches);
