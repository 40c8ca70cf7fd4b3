use criterion::{criterion_group, criterion_main, Criterion};
use servecurve::metrics::fit_report;
use servecurve_bench::{short_fit, synthetic};

fn criteria(c: &mut Criterion) {
    let (model, data) = synthetic(20, 20_000);
    let draws = short_fit(&model, &data, 200);
    let mut group = c.benchmark_group("criteria");
    group.sample_size(10);
    group.bench_function("fit_report 200 draws x 20k points", |b| {
        b.iter(|| fit_report(&draws, &data).unwrap())
    });
    group.finish();
}

criterion_group!(benches, criteria);
criterion_main!(benches);
