use bpre_bench::models;
use bpre_core::{dp_survival_bounds, enumerate_survival};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn oracles(c: &mut Criterion) {
    let b_model = models().swap_remove(1).1;
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    for n in [6, 10] {
        group.bench_with_input(BenchmarkId::new("enumerate", n), &n, |b, &n| {
            b.iter(|| enumerate_survival(black_box(&b_model), n).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dp_m200", n), &n, |b, &n| {
            b.iter(|| dp_survival_bounds(black_box(&b_model), n, 200).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, oracles);
criterion_main!(benches);
