use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use servecurve::SplineSpec;

fn splines(c: &mut Criterion) {
    let spec = SplineSpec::tennis_default();
    let coeffs: Vec<f64> = (0..spec.dim()).map(|m| 1.0 - 0.1 * m as f64).collect();
    let grid: Vec<f64> = (0..1401).map(|i| 1.0 + i as f64 * 0.01).collect();

    c.bench_function("basis_all 1401 points", |b| {
        b.iter(|| {
            for &s in &grid {
                black_box(spec.basis_all(s).unwrap());
            }
        })
    });
    c.bench_function("spline_eval 1401 points", |b| {
        b.iter(|| grid.iter().map(|&s| spec.spline_eval(&coeffs, s).unwrap()).sum::<f64>())
    });
    c.bench_function("spline_derivative 1401 points", |b| {
        b.iter(|| grid.iter().map(|&s| spec.spline_derivative(&coeffs, s).unwrap()).sum::<f64>())
    });
}

criterion_group!(benches, splines);
criterion_main!(benches);
