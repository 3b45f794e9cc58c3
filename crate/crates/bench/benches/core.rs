use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use ndpoly::model::{export_expression, default_band_names};
use ndpoly::selection::{rfe_path, select_k_best};
use ndpoly::spectral::{evaluate_batch, FeatureDescriptor, NdPair};
use ndpoly::svm::{fit_standardization, train_linear_svm, Regularization, SvmParams};
use ndpoly::{enumerate_features, generate_synthetic, Dialect, ModelSpec, SampleTable, SynthParams};

fn scene(n: usize) -> SampleTable {
    generate_synthetic(&SynthParams {
        n_samples: n,
        ..SynthParams::default()
    })
    .unwrap()
}

fn standardized_features(table: &SampleTable) -> Array2<f64> {
    let space = enumerate_features(table.n_bands(), 2).unwrap();
    let x = table.features(&space, 1e-10).unwrap();
    fit_standardization(x.view()).unwrap().apply(x.view()).unwrap()
}

fn features(c: &mut Criterion) {
    c.bench_function("enumerate_features n=12", |b| {
        b.iter(|| enumerate_features(black_box(12), 2).unwrap())
    });
    let table = scene(2000);
    let space = enumerate_features(10, 2).unwrap();
    c.bench_function("evaluate_batch 2000x1080", |b| {
        b.iter(|| evaluate_batch(black_box(table.rows()), &space, 1e-10).unwrap())
    });
}

fn selection(c: &mut Criterion) {
    let table = scene(2000);
    let z = standardized_features(&table);
    c.bench_function("select_k_best 2000x1080", |b| {
        b.iter(|| select_k_best(black_box(z.view()), table.labels(), 10).unwrap())
    });

    let small = scene(300);
    let zs = standardized_features(&small);
    let cols: Vec<usize> = (0..120).collect();
    let sub = zs.select(ndarray::Axis(1), &cols);
    let mut group = c.benchmark_group("rfe_path");
    group.sample_size(10);
    group.bench_function("300x120 to 1", |b| {
        b.iter(|| rfe_path(black_box(sub.view()), small.labels(), 1, 1, &SvmParams::default()).unwrap())
    });
    group.finish();
}

fn svm(c: &mut Criterion) {
    let table = scene(2000);
    let z = standardized_features(&table);
    let mut group = c.benchmark_group("train_l2");
    group.sample_size(10);
    for k in [1usize, 10, 100] {
        let cols: Vec<usize> = (884..1080).chain(0..884).take(k).collect();
        let sub = z.select(ndarray::Axis(1), &cols);
        group.bench_with_input(BenchmarkId::from_parameter(k), &sub, |b, sub| {
            b.iter(|| train_linear_svm(sub.view(), table.labels(), Regularization::L2, &SvmParams::default()).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let anchor = FeatureDescriptor::product(NdPair::one_based(4, 5).unwrap(), NdPair::one_based(7, 8).unwrap())
        .unwrap();
    let space = enumerate_features(10, 2).unwrap();
    let terms: Vec<FeatureDescriptor> = std::iter::once(anchor)
        .chain(space.descriptors()[90..99].iter().copied())
        .collect();
    let weights: Vec<f64> = (0..terms.len()).map(|i| 1.0 + i as f64).collect();
    c.bench_function("hypercube bound 10 terms", |b| {
        b.iter(|| {
            ModelSpec::new(10, 2, black_box(terms.clone()), -3.7581, weights.clone())
                .build()
                .unwrap()
        })
    });
    let m = ModelSpec::new(10, 2, terms.clone(), -3.7581, weights.clone()).build().unwrap();
    let names = default_band_names(10);
    c.bench_function("export_expression generic", |b| {
        b.iter(|| export_expression(black_box(&m), Dialect::GenericInfix, &names).unwrap())
    });
}

criterion_group!(benches, features, selection, svm, model);
criterion_main!(benches);
