use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use msopt_core::parallel::Execution;
use msopt_core::tucker::{bcd_factorize, multiscale_factorize, synth_mixtures, CoreConstraint, FactorizeOptions, SynthSpec};
use std::hint::black_box;

fn modes() -> Vec<(&'static str, Execution)> {
    let mut v = vec![("sequential", Execution::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Execution::Parallel));
    }
    v
}

fn factorization(c: &mut Criterion) {
    let y = synth_mixtures(&SynthSpec { points: 33, ..Default::default() }).unwrap().y;
    let mut group = c.benchmark_group("tucker_10_iterations_5x33x33x33");
    group.sample_size(10);
    for (name, execution) in modes() {
        let opts = FactorizeOptions {
            rank: 3,
            max_iterations: 10,
            core: CoreConstraint::Nonnegative,
            subblock_updates: true,
            execution,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::new("single_scale", name), &opts, |b, o| {
            b.iter(|| bcd_factorize(black_box(&y), o).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("multiscale", name), &opts, |b, o| {
            b.iter(|| multiscale_factorize(black_box(&y), &[1, 2, 3], o).unwrap())
        });
    }
    group.finish();
}

fn reductions(c: &mut Criterion) {
    let n = 1 << 20;
    let data: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let mut group = c.benchmark_group("sum_of_squares_2^20");
    for (name, execution) in modes() {
        group.bench_function(name, |b| b.iter(|| execution.sum_range(n, |i| data[i] * data[i])));
    }
    group.finish();
}

criterion_group!(benches, factorization, reductions);
criterion_main!(benches);
