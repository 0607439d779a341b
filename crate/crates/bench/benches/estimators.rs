use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use leeb_core::lasso::{weighted_logistic_lasso, SolverOptions};
use leeb_core::{bounds_curve_nocov, build_grid, generate, BandwidthPlan, BandwidthRule, DgpSpec, EstimatorConfig, WeightedSample};

fn nocov(c: &mut Criterion) {
    let grid = build_grid(0.2, 0.8, 20).unwrap();
    let mut group = c.benchmark_group("nocov_curve");
    group.sample_size(10);
    for n in [5_000usize, 20_000] {
        let data = generate(&DgpSpec::canonical(0), n, 1).unwrap();
        for (name, rule) in [("fixed", BandwidthRule::Fixed(0.08)), ("amse", BandwidthRule::Amse)] {
            let config = EstimatorConfig {
                bandwidth: BandwidthPlan { rule, ..Default::default() },
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &data, |b, d| {
                b.iter(|| bounds_curve_nocov(black_box(d), &grid, &config).unwrap())
            });
        }
    }
    group.finish();
}

fn trimmed_means(c: &mut Criterion) {
    let data = generate(&DgpSpec::canonical(0), 50_000, 2).unwrap();
    let pairs: Vec<(f64, f64)> = (0..data.n())
        .filter(|&i| data.selected(i))
        .map(|i| (data.y(i), 1.0 - (data.d(i) - 0.5).abs()))
        .collect();
    c.bench_function("weighted_sample_build_and_trim", |b| {
        b.iter(|| {
            let ws = WeightedSample::new(black_box(pairs.clone()));
            (ws.upper_trimmed_mean(0.8), ws.lower_trimmed_mean(0.8))
        })
    });
}

fn lasso(c: &mut Criterion) {
    let data = generate(&DgpSpec::canonical(10), 5_000, 3).unwrap();
    let p = 11;
    let mut x = Vec::with_capacity(data.n() * p);
    for i in 0..data.n() {
        x.push(1.0);
        x.extend_from_slice(data.x_row(i));
    }
    let y: Vec<f64> = data.selections().iter().map(|&s| s as f64).collect();
    let w = vec![1.0; data.n()];
    let mut loadings = vec![1.0; p];
    loadings[0] = 0.0;
    c.bench_function("logistic_lasso_n5000_p11", |b| {
        b.iter(|| weighted_logistic_lasso(black_box(&x), p, &y, &w, 20.0, &loadings, &SolverOptions::default()).unwrap())
    });
}

criterion_group!(benches, nocov, trimmed_means, lasso);
criterion_main!(benches);
