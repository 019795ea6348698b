use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use loja_bench::{example, spiral};
use loja_core::kinf::{geometric_radii, sweep_min_product, SweepOptions, SweepVariant};
use loja_core::levelset::{dist_oracle_adaptive, project_to_levelset, AdaptiveOracle, LevelSpec, ProjectionOptions};
use loja_core::loja::{fit_constants, DistBackend, LojaForm, Region, SamplerSpec};

fn tape(c: &mut Criterion) {
    let f = example("e3");
    let mut grad = vec![0.0; 3];
    let x = [0.01, 100.0, 100.0];
    c.bench_function("tape/value_grad e3", |b| b.iter(|| f.value_grad(black_box(&x), &mut grad).unwrap()));
}

fn distances(c: &mut Criterion) {
    let f = example("broughton");
    let level = LevelSpec::with_default_tol(&f, 0.0);
    let points: Vec<Vec<f64>> = (0..16).map(|k| spiral(k, 2, 100.0)).collect();
    let oracle = AdaptiveOracle::default();
    c.bench_function("oracle/broughton 16 points", |b| {
        b.iter(|| points.iter().map(|x| dist_oracle_adaptive(&level, x, &oracle).unwrap().dist).sum::<f64>())
    });
    let opts = ProjectionOptions::default();
    c.bench_function("projection/broughton 16 points", |b| {
        b.iter(|| points.iter().map(|x| project_to_levelset(&level, x, &opts).unwrap().dist_upper).sum::<f64>())
    });
}

fn sweep(c: &mut Criterion) {
    let f = example("e3");
    let radii = geometric_radii(10.0, 2.0, 6);
    let opts = SweepOptions::default();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("e3 K 6 radii", |b| {
        b.iter(|| sweep_min_product(&f, 0.0, &radii, None, SweepVariant::K, &opts).unwrap())
    });
    group.finish();
}

fn fit(c: &mut Criterion) {
    let f = example("broughton");
    let form = LojaForm::mixed(1.0 / 18.0).unwrap();
    let sampler = SamplerSpec { region: Region::Annulus { r_min: 1.0, r_max: 100.0 }, count: 100, seed: 0 };
    let backend = DistBackend::default_for_fit(2);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("broughton 100 samples", |b| {
        b.iter(|| fit_constants(&f, 0.0, &form, &sampler, &backend).unwrap().c_star)
    });
    group.finish();
}

criterion_group!(benches, tape, distances, sweep, fit);
criterion_main!(benches);
