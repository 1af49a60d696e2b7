use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sso_bench::{sampler, smoothing, sphere};
use sso_core::gradient_estimate;

fn estimator(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient_estimate");
    for n in [10usize, 100, 1000] {
        let oracle = sphere(n);
        let x = vec![0.5; n];
        for parallel in [false, true] {
            let cfg = smoothing(20, parallel);
            let mut s = sampler();
            let id = BenchmarkId::new(if parallel { "parallel" } else { "serial" }, n);
            group.bench_with_input(id, &n, |b, _| {
                b.iter(|| gradient_estimate(&oracle, black_box(&x), &cfg, &mut s).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, estimator);
criterion_main!(benches);
