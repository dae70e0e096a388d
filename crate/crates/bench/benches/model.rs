use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gkg_bench::{batch, model, prompt};

fn bench_forward(c: &mut Criterion) {
    let model = model();
    let tokens = prompt(128);
    c.bench_function("forward/128", |b| b.iter(|| model.forward(black_box(&tokens)).unwrap()));
}

fn bench_gradients(c: &mut Criterion) {
    let model = model();
    let batch = batch(8);
    c.bench_function("gradients/batch8", |b| b.iter(|| model.gradients(black_box(&batch)).unwrap()));
}

fn bench_decode(c: &mut Criterion) {
    let model = model();
    let prompt = prompt(40);
    c.bench_function("greedy_decode/32", |b| b.iter(|| model.greedy_decode(black_box(&prompt), 32).unwrap()));
}

criterion_group!(benches, bench_forward, bench_gradients, bench_decode);
criterion_main!(benches);
