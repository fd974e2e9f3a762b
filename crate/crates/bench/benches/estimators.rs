use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use heavytail_core::{
    composite_mle, dyn_mle, e_step, fit_em, stream_rng, DynamicMixParams, EmConfig, StaticMixParams,
};

fn sample(n: usize) -> Vec<f64> {
    let m = StaticMixParams::new(0.9, 0.0, 0.25, 0.5, 3.5).unwrap();
    m.sample(&mut stream_rng(1, 0), n)
}

fn estimators(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    for n in [250, 500, 1000] {
        let x = sample(n);
        g.bench_with_input(BenchmarkId::new("static_em", n), &x, |b, x| {
            b.iter(|| fit_em(black_box(x), &EmConfig::default()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("composite_mle", n), &x, |b, x| {
            b.iter(|| composite_mle(black_box(x)).unwrap())
        });
    }
    let x = sample(500);
    g.bench_function("dynamic_mle/500", |b| b.iter(|| dyn_mle(black_box(&x)).unwrap()));
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let x = sample(1000);
    let theta = StaticMixParams::new(0.9, 0.0, 0.25, 0.5, 3.5).unwrap();
    c.bench_function("e_step/1000", |b| b.iter(|| e_step(black_box(&x), &theta).unwrap()));
    c.bench_function("dynamic_normconst", |b| {
        b.iter(|| DynamicMixParams::new(black_box(1.0), 2.0, 0.0, 0.25, 0.25, 3.5).unwrap())
    });
}

criterion_group!(benches, estimators, kernels);
criterion_main!(benches);
