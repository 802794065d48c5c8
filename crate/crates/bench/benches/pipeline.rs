use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mwae_core::anomaly::{roc, ScoreKind, ScoredSample};
use mwae_core::cluster::{kmeans, silhouette, FeatureSet, FeatureVector};
use mwae_core::data::{generate_synthetic, Label};
use mwae_core::Rng;

fn bench_generator(c: &mut Criterion) {
    c.bench_function("generate_synthetic 16 leaves @64", |bench| {
        bench.iter(|| {
            let mut rng = Rng::seed_from(3);
            black_box(generate_synthetic(8, 8, 64, &mut rng).unwrap())
        })
    });
}

fn blob_set(n: usize, dim: usize, seed: u64) -> FeatureSet {
    let mut rng = Rng::seed_from(seed);
    let vectors = (0..n)
        .map(|i| {
            let center = if i % 2 == 0 { 0.0 } else { 6.0 };
            FeatureVector {
                sample_id: format!("s{i}"),
                values: (0..dim).map(|_| rng.normal(center, 1.0)).collect(),
            }
        })
        .collect();
    FeatureSet {
        vectors,
        features: vec![0],
    }
}

fn bench_clustering(c: &mut Criterion) {
    let set = blob_set(200, 64, 4);
    c.bench_function("kmeans k=2 x20 restarts (200x64)", |bench| {
        bench.iter(|| black_box(kmeans(&set, 2, 20, &mut Rng::seed_from(5)).unwrap()))
    });
    let run = kmeans(&set, 2, 5, &mut Rng::seed_from(6)).unwrap();
    c.bench_function("silhouette (200x64)", |bench| {
        bench.iter(|| black_box(silhouette(&set, &run.assignments).unwrap()))
    });
}

fn bench_roc(c: &mut Criterion) {
    let mut rng = Rng::seed_from(7);
    let scored: Vec<ScoredSample> = (0..500)
        .map(|i| {
            let diseased = i % 2 == 0;
            let s = if diseased {
                rng.uniform_in(0.3, 1.0)
            } else {
                rng.uniform_in(0.0, 0.6)
            };
            ScoredSample {
                sample_id: format!("s{i}"),
                label: if diseased { Label::Diseased } else { Label::Healthy },
                severity: None,
                s_x: s,
                s_z: s,
                dead_bottleneck: false,
            }
        })
        .collect();
    c.bench_function("roc sweep (500 samples)", |bench| {
        bench.iter(|| black_box(roc(&scored, ScoreKind::ImageSpace).unwrap()))
    });
}

criterion_group!(benches, bench_generator, bench_clustering, bench_roc);
criterion_main!(benches);
