use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hypalign_core::features::{cross_attention_backward, cross_attention_forward, init_attention};
use hypalign_core::trainer::{train_step, Problem, TrainState};
use hypalign_core::TrainConfig;
use ndarray::Array2;

fn attention(c: &mut Criterion) {
    let d = 64;
    let params = init_attention(d, 0, 0.02).unwrap();
    let queries = Array2::from_shape_fn((3, d), |(i, j)| ((i * d + j) as f64 * 0.1).sin());
    let tokens = Array2::from_shape_fn((3, d), |(i, j)| ((i * d + j) as f64 * 0.07).cos());
    let grad = Array2::ones((3, d));
    c.bench_function("attention_forward", |b| {
        b.iter(|| cross_attention_forward(black_box(queries.view()), tokens.view(), &params))
    });
    let (_, cache) = cross_attention_forward(queries.view(), tokens.view(), &params).unwrap();
    c.bench_function("attention_backward", |b| {
        b.iter(|| cross_attention_backward(black_box(queries.view()), tokens.view(), &params, &cache, grad.view()))
    });
}

fn step(c: &mut Criterion) {
    let config = TrainConfig::default();
    let problem = Problem::load(&config.data, config.seed).unwrap();
    let state = TrainState::init(&config, problem.dim()).unwrap();
    c.bench_function("train_step/default", |b| b.iter(|| train_step(&problem, black_box(&state), &config)));
}

criterion_group!(benches, attention, step);
criterion_main!(benches);
