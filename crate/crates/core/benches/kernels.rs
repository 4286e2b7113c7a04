use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fashionrec_core::embedding::MockEmbedder;
use fashionrec_core::history::{self, FilterConfig};
use fashionrec_core::metrics::{self, EvalPair};
use fashionrec_core::samples;
use fashionrec_core::synth::{self, SynthConfig};
use fashionrec_core::{Catalog, FeatureStore};

fn corpus(n_outfits: usize) -> Catalog {
    synth::generate(&SynthConfig {
        n_outfits,
        ..Default::default()
    })
    .into_catalog()
    .expect("synthetic corpus is valid")
}

fn store() -> FeatureStore {
    FeatureStore::new(Arc::new(MockEmbedder::new(512).unwrap()))
}

fn nearest(c: &mut Criterion) {
    let catalog = corpus(240);
    let features = store();
    features.warm(&catalog).unwrap();
    let query = features.feature(&catalog.items()[0]).unwrap();
    let mut group = c.benchmark_group("nearest_items");
    group.bench_function("seq", |b| {
        b.iter(|| catalog.nearest_items_sequential(&features, black_box(&query), None, 10))
    });
    group.bench_function("par", |b| {
        b.iter(|| catalog.nearest_items(&features, black_box(&query), None, 10))
    });
    group.finish();
}

fn alternative_pairs(c: &mut Criterion) {
    let mut group = c.benchmark_group("alternative_pairs");
    for n in [240, 2000] {
        let catalog = corpus(n);
        let expected = samples::find_alternative_pairs_sequential(&catalog);
        group.bench_with_input(BenchmarkId::new("seq", n), &n, |b, _| {
            b.iter(|| samples::find_alternative_pairs_sequential(black_box(&catalog)))
        });
        group.bench_with_input(BenchmarkId::new("par", n), &n, |b, _| {
            assert_eq!(expected, samples::find_alternative_pairs(&catalog));
            b.iter(|| samples::find_alternative_pairs(black_box(&catalog)))
        });
    }
    group.finish();
}

fn history_filter(c: &mut Criterion) {
    let catalog = corpus(240);
    let features = store();
    features.warm(&catalog).unwrap();
    let pairs = samples::personalized_pairs(&catalog);
    let config = FilterConfig::default();
    let mut group = c.benchmark_group("history_filter");
    group.sample_size(10);
    group.bench_function("seq", |b| {
        b.iter(|| history::filter_batch_sequential(&catalog, &features, black_box(&pairs), &config))
    });
    group.bench_function("par", |b| {
        b.iter(|| history::filter_batch(&catalog, &features, black_box(&pairs), &config))
    });
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let embedder = MockEmbedder::new(512).unwrap();
    let pairs: Vec<EvalPair> = (0..500)
        .map(|i| EvalPair {
            id: i.to_string(),
            gen_text: Some(format!("generated recommendation {i}")),
            gt_text: Some(format!("ground truth {i}")),
            gen_image: Some(format!("gen/{i}.png")),
            gt_image: Some(format!("gt/{i}.png")),
            history_images: (0..5).map(|h| format!("hist/{i}-{h}.png")).collect(),
        })
        .collect();
    let mut group = c.benchmark_group("evaluate_run");
    group.bench_function("seq", |b| b.iter(|| metrics::evaluate_run_sequential(black_box(&pairs), &embedder)));
    group.bench_function("par", |b| b.iter(|| metrics::evaluate_run(black_box(&pairs), &embedder)));
    group.finish();
}

criterion_group!(benches, nearest, alternative_pairs, history_filter, evaluate);
criterion_main!(benches);
