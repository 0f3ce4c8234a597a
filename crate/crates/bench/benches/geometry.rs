use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hypalign_core::entailment::cone_violation_grad;
use hypalign_core::lorentz::{distance_grad, expm_origin_raw, expm_raw, logm_raw, proj_tangent_raw, DEFAULT_APERTURE_K};

fn points(dim: usize, c: f64) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..dim).map(|i| ((i as f64) * 0.37).sin()).collect();
    let b: Vec<f64> = (0..dim).map(|i| ((i as f64) * 0.53).cos() * 0.8).collect();
    (expm_origin_raw(c, &a), expm_origin_raw(c, &b))
}

fn geometry(c: &mut Criterion) {
    let curv = 0.5;
    for dim in [8, 64, 512] {
        let (x, y) = points(dim, curv);
        let v = proj_tangent_raw(&x, &y, curv);
        c.bench_function(&format!("expm/{dim}"), |b| b.iter(|| expm_raw(black_box(&x), black_box(&v), curv)));
        c.bench_function(&format!("logm/{dim}"), |b| b.iter(|| logm_raw(black_box(&y), black_box(&x), curv)));
        c.bench_function(&format!("distance_grad/{dim}"), |b| b.iter(|| distance_grad(black_box(&x), black_box(&y), curv)));
        c.bench_function(&format!("cone_violation_grad/{dim}"), |b| {
            b.iter(|| cone_violation_grad(black_box(&y), black_box(&x), curv, DEFAULT_APERTURE_K))
        });
    }
}

criterion_group!(benches, geometry);
criterion_main!(benches);
