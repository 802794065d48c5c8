//! Cross-module flows: feature extraction off trained encoders, planted
//! feature ranking, checkpointed scoring.

use mwae_core::cluster::{self, FeatureSelection};
use mwae_core::data::{generate_synthetic, Label};
use mwae_core::nn::{load_checkpoint, save_checkpoint, ModelSpec, ModelState};
use mwae_core::tensor::Tensor;
use mwae_core::{anomaly, Rng};

fn clu_model(channels: usize, size: usize, seed: u64) -> ModelState {
    let spec = ModelSpec::clu_ae(channels, (size, size)).unwrap();
    let mut m = ModelState::new(spec).unwrap();
    m.he_init(&mut Rng::seed_from(seed));
    m
}

#[test]
fn feature_vector_lengths_match_selection() {
    let mut rng = Rng::seed_from(1);
    let ds = generate_synthetic(3, 0, 64, &mut rng)
        .unwrap()
        .with_vi_channel()
        .unwrap();
    let model = clu_model(5, 64, 2);
    // 64 maps of 8x8 each
    let all = cluster::extract_features(&model, &ds, &FeatureSelection::All).unwrap();
    assert_eq!(all.dim(), 64 * 8 * 8);
    assert_eq!(all.len(), 3);
    // paper-style single feature no.33 = 0-based index 32
    let one = cluster::extract_features(&model, &ds, &FeatureSelection::Indices(vec![32])).unwrap();
    assert_eq!(one.dim(), 64);
    // out-of-range selection is rejected
    assert!(cluster::extract_features(&model, &ds, &FeatureSelection::Indices(vec![64])).is_err());
}

#[test]
fn extraction_is_deterministic() {
    let mut rng = Rng::seed_from(3);
    let ds = generate_synthetic(2, 1, 32, &mut rng)
        .unwrap()
        .with_vi_channel()
        .unwrap();
    let model = clu_model(5, 32, 4);
    let a = cluster::extract_features(&model, &ds, &FeatureSelection::All).unwrap();
    let b = cluster::extract_features(&model, &ds, &FeatureSelection::All).unwrap();
    for (x, y) in a.vectors.iter().zip(&b.vectors) {
        assert_eq!(x.values, y.values);
    }
}

/// Surgically wire the encoder so bottleneck feature 0 carries channel 0
/// of the input and every other feature is dead, then check the ranking
/// puts the planted feature first.
#[test]
fn rank_features_finds_a_planted_signal() {
    let size = 32;
    let mut model = clu_model(5, size, 5);
    let zero_like = |m: &ModelState, name: &str| Tensor::zeros(m.param(name).unwrap().shape());
    let names: Vec<String> = model.param_names().cloned().collect();
    for name in &names {
        let t = zero_like(&model, name);
        let t = if name.ends_with(".gamma") {
            Tensor::full(t.shape(), 1.0)
        } else {
            t
        };
        model.set_param(name, t).unwrap();
    }
    // pass-through taps: block i, output channel 0 reads input channel 0
    for (name, cin) in [
        ("enc1.conv.w", 5usize),
        ("enc2.conv.w", 8),
        ("enc3.conv.w", 16),
        ("enc4.conv.w", 32),
    ] {
        let shape = model.param(name).unwrap().shape().to_vec();
        let mut data = vec![0.0f32; shape.iter().product()];
        // kernel[0, 0, center, center] = 1
        let k = shape[3];
        data[(k / 2) * k + k / 2] = 1.0;
        let _ = cin;
        model.set_param(name, Tensor::new(data, &shape).unwrap()).unwrap();
    }

    // two groups separated only in channel 0
    let mut rng = Rng::seed_from(6);
    let mut samples = Vec::new();
    for g in 0..2 {
        for i in 0..6 {
            let level = if g == 0 { 0.2f32 } else { 0.9 };
            let mut bands = vec![0.5f32; 5 * size * size];
            for (j, v) in bands[..size * size].iter_mut().enumerate() {
                *v = level + ((i + j) % 3) as f32 * 1e-3; // tiny texture, far from the gap
            }
            let _ = rng.uniform();
            samples.push(mwae_core::SpectralImage {
                bands: Tensor::new(bands, &[5, size, size]).unwrap(),
                mask: Tensor::full(&[size, size], 1.0),
                label: Label::Unknown,
                severity: None,
                provenance: format!("g{g}i{i}"),
                lesion_mask: None,
            });
        }
    }
    let ds = mwae_core::Dataset {
        samples,
        band_names: vec!["b430", "g530", "r685", "nir740", "vi"]
            .into_iter()
            .map(String::from)
            .collect(),
        seed: None,
    };

    let ranking = cluster::rank_features(&model, &ds, 2, &mut Rng::seed_from(7)).unwrap();
    assert_eq!(ranking.len(), 64);
    assert_eq!(ranking[0].index, 0, "planted feature should rank first");
    assert!(ranking[0].asc > 0.9, "planted aSC {}", ranking[0].asc);
    assert!(ranking[1].asc <= 0.05, "runner-up aSC {}", ranking[1].asc);
    // deterministic under a fixed seed
    let again = cluster::rank_features(&model, &ds, 2, &mut Rng::seed_from(7)).unwrap();
    assert_eq!(again[0].index, ranking[0].index);
    assert_eq!(again[0].asc, ranking[0].asc);
}

#[test]
fn scoring_through_a_checkpoint_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mwck");
    let mut rng = Rng::seed_from(8);
    let ds = generate_synthetic(3, 3, 32, &mut rng).unwrap();
    let spec = ModelSpec::ano_ae(mwae_core::AnoVariant::S3, 4, (32, 32)).unwrap();
    let mut model = ModelState::new(spec).unwrap();
    model.he_init(&mut rng);
    save_checkpoint(&model, &path).unwrap();
    let restored = load_checkpoint(&path).unwrap();

    let idx: Vec<usize> = (0..ds.len()).collect();
    let a = anomaly::score_dataset(&model, &ds, &idx, false).unwrap();
    let b = anomaly::score_dataset(&restored, &ds, &idx, false).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.s_x.to_bits(), y.s_x.to_bits());
        assert_eq!(x.s_z.to_bits(), y.s_z.to_bits());
    }
}
