use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedcl_bench::{batch, config, updates};
use fedcl_core::nn::Mode;
use fedcl_core::run_fl;
use fedcl_core::strategy::{fedavg_aggregate, fedbn_aggregate};
use std::hint::black_box;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    for size in [32, 256] {
        let (model, x, y) = batch(size);
        group.bench_with_input(BenchmarkId::new("predict", size), &size, |b, _| {
            b.iter(|| model.predict(black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("loss_and_grad", size), &size, |b, _| {
            b.iter(|| model.loss_and_grad(black_box(&x), &y, Mode::Train, None).unwrap())
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate");
    for clients in [2, 10] {
        let ups = updates(clients);
        group.bench_with_input(BenchmarkId::new("fedavg", clients), &ups, |b, ups| {
            b.iter(|| fedavg_aggregate(black_box(ups)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fedbn", clients), &ups, |b, ups| {
            b.iter(|| fedbn_aggregate(black_box(ups), false).unwrap())
        });
    }
    group.finish();
}

fn round(c: &mut Criterion) {
    let mut group = c.benchmark_group("fl_round");
    group.sample_size(20);
    for clients in [2, 10] {
        let cfg = config(2000, clients);
        group.bench_with_input(BenchmarkId::new("fedavg", clients), &cfg, |b, cfg| {
            b.iter(|| run_fl(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, aggregation, round);
criterion_main!(benches);
