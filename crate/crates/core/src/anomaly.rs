//! Anomaly scoring and evaluation.
//!
//! A model trained on healthy leaves reconstructs them well; lesions it
//! has never seen reconstruct poorly. Two normalized discrepancies make
//! that operational: the image-space score `s_x = |x - x_hat|^2 / |x|^2`
//! and the feature-space score `s_z = |z - z_tilde|^2 / |z|^2`, where
//! `z_tilde` re-encodes the reconstruction. A sample is flagged anomalous
//! when its score reaches the threshold gamma; sweeping gamma yields the
//! ROC curve, summarized by the area under it.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Dataset, Label, Severity};
use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::tensor::Tensor;

/// Both anomaly scores of one sample, with its ground truth.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub sample_id: String,
    pub label: Label,
    pub severity: Option<Severity>,
    pub s_x: f64,
    pub s_z: f64,
    /// The encoder emitted an all-zero bottleneck (s_z defined as 0).
    pub dead_bottleneck: bool,
}

/// Which score a ROC sweep reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    ImageSpace,
    FeatureSpace,
}

impl ScoreKind {
    pub fn column(&self) -> &'static str {
        match self {
            ScoreKind::ImageSpace => "s_x",
            ScoreKind::FeatureSpace => "s_z",
        }
    }

    fn of(&self, s: &ScoredSample) -> f64 {
        match self {
            ScoreKind::ImageSpace => s.s_x,
            ScoreKind::FeatureSpace => s.s_z,
        }
    }
}

/// `|a - b|^2 / |a|^2` over all elements, optionally restricted to a
/// per-pixel weight plane replicated across channels.
fn normalized_discrepancy(
    a: &[f32],
    b: &[f32],
    weights: Option<(&[f32], usize)>,
) -> Result<(f64, f64)> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    match weights {
        None => {
            for (&x, &y) in a.iter().zip(b) {
                let d = (x - y) as f64;
                num += d * d;
                den += (x as f64) * (x as f64);
            }
        }
        Some((mask, plane)) => {
            for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
                let w = mask[i % plane] as f64;
                let d = (x - y) as f64;
                num += w * d * d;
                den += w * (x as f64) * (x as f64);
            }
        }
    }
    Ok((num, den))
}

/// Image-space reconstruction score of one `[C,H,W]` sample.
pub fn score_image(model: &ModelState, bands: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    let shape = bands.shape();
    let x = Tensor::new(bands.data().to_vec(), &[1, shape[0], shape[1], shape[2]])?;
    let xhat = model.forward(&x)?;
    compute_sx(
        bands.data(),
        xhat.data(),
        mask.map(|m| (m.data(), shape[1] * shape[2])),
    )
}

/// `s_x` from raw buffers; exposed for oracle tests.
pub fn compute_sx(x: &[f32], xhat: &[f32], mask: Option<(&[f32], usize)>) -> Result<f64> {
    let (num, den) = normalized_discrepancy(x, xhat, mask)?;
    if den == 0.0 {
        return Err(Error::degenerate(
            "score_image on an all-zero input (|x| = 0)",
        ));
    }
    Ok(num / den)
}

/// Feature-space score of one `[C,H,W]` sample; the flag reports a dead
/// (all-zero) bottleneck, which scores 0 by convention.
pub fn score_feature(model: &ModelState, bands: &Tensor) -> Result<(f64, bool)> {
    let shape = bands.shape();
    let x = Tensor::new(bands.data().to_vec(), &[1, shape[0], shape[1], shape[2]])?;
    let z = model.encode(&x)?;
    let xhat = model.decode(&z)?;
    let z_tilde = model.encode(&xhat)?;
    Ok(compute_sz(z.data(), z_tilde.data()))
}

/// `s_z` from raw buffers; `|z| = 0` yields `(0, true)`.
pub fn compute_sz(z: &[f32], z_tilde: &[f32]) -> (f64, bool) {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in z.iter().zip(z_tilde) {
        let d = (a - b) as f64;
        num += d * d;
        den += (a as f64) * (a as f64);
    }
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

/// Score the selected samples with both scores; order follows `indices`.
pub fn score_dataset(
    model: &ModelState,
    dataset: &Dataset,
    indices: &[usize],
    masked: bool,
) -> Result<Vec<ScoredSample>> {
    indices
        .par_iter()
        .map(|&i| -> Result<ScoredSample> {
            let s = &dataset.samples[i];
            let mask = masked.then_some(&s.mask);
            let s_x = score_image(model, &s.bands, mask)?;
            let (s_z, dead) = score_feature(model, &s.bands)?;
            if !s_x.is_finite() || !s_z.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite anomaly score for sample '{}'",
                    s.provenance
                )));
            }
            Ok(ScoredSample {
                sample_id: s.provenance.clone(),
                label: s.label,
                severity: s.severity,
                s_x,
                s_z,
                dead_bottleneck: dead,
            })
        })
        .collect()
}

/// Threshold rule: anomalous iff `s >= gamma`.
pub fn classify(scores: &[f64], gamma: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= gamma).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub gamma: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over all distinct thresholds, from (0,0) to (1,1), with the
/// trapezoidal area under it.
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweep gamma over the distinct score values (plus a +inf sentinel).
/// Requires both classes present; `Unknown` labels are rejected.
pub fn roc(scored: &[ScoredSample], which: ScoreKind) -> Result<RocCurve> {
    let mut positives = 0usize; // diseased
    let mut negatives = 0usize;
    for s in scored {
        match s.label {
            Label::Diseased => positives += 1,
            Label::Healthy => negatives += 1,
            Label::Unknown => {
                return Err(Error::data(format!(
                    "sample '{}' is unlabeled; ROC needs ground truth",
                    s.sample_id
                )))
            }
        }
    }
    if positives == 0 || negatives == 0 {
        return Err(Error::degenerate(format!(
            "ROC undefined with {positives} diseased and {negatives} healthy samples"
        )));
    }

    let mut thresholds: Vec<f64> = scored.iter().map(|s| which.of(s)).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    thresholds.dedup();

    let mut points = vec![RocPoint {
        gamma: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for &gamma in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for s in scored {
            if which.of(s) >= gamma {
                match s.label {
                    Label::Diseased => tp += 1,
                    Label::Healthy => fp += 1,
                    Label::Unknown => unreachable!("rejected above"),
                }
            }
        }
        points.push(RocPoint {
            gamma,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

/// AUC as the Mann-Whitney statistic: the fraction of (diseased,
/// healthy) pairs ranked correctly, ties counting one half.
pub fn mann_whitney_auc(scored: &[ScoredSample], which: ScoreKind) -> Result<f64> {
    let pos: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == Label::Diseased)
        .map(|s| which.of(s))
        .collect();
    let neg: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == Label::Healthy)
        .map(|s| which.of(s))
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::degenerate(
            "Mann-Whitney AUC needs both classes".to_string(),
        ));
    }
    let mut favorable = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                favorable += 1.0;
            } else if p == n {
                favorable += 0.5;
            }
        }
    }
    Ok(favorable / (pos.len() as f64 * neg.len() as f64))
}

/// One model's evaluation on the shared sample pool.
#[derive(Debug, Clone)]
pub struct VariantEvaluation {
    pub name: String,
    pub scores: Vec<ScoredSample>,
    pub roc_sx: RocCurve,
    pub roc_sz: RocCurve,
}

/// Per-variant AUC comparison, sorted descending by AUC(s_x).
#[derive(Debug, Clone)]
pub struct ModelComparison {
    pub variants: Vec<VariantEvaluation>,
    pub best_sx: String,
    pub best_sz: String,
}

/// Score every evaluation sample with every model and assemble the AUC
/// table. The trapezoidal AUC is cross-checked against the Mann-Whitney
/// route on every curve.
pub fn evaluate_models(
    models: &[(String, ModelState)],
    dataset: &Dataset,
    eval_indices: &[usize],
    masked: bool,
) -> Result<ModelComparison> {
    if models.is_empty() {
        return Err(Error::parameter("no models to evaluate".to_string()));
    }
    let mut variants = Vec::with_capacity(models.len());
    for (name, model) in models {
        let scores = score_dataset(model, dataset, eval_indices, masked)?;
        let roc_sx = roc(&scores, ScoreKind::ImageSpace)?;
        let roc_sz = roc(&scores, ScoreKind::FeatureSpace)?;
        for (curve, kind) in [(&roc_sx, ScoreKind::ImageSpace), (&roc_sz, ScoreKind::FeatureSpace)] {
            let mw = mann_whitney_auc(&scores, kind)?;
            if (curve.auc - mw).abs() >= 1e-12 {
                return Err(Error::numeric(format!(
                    "AUC routes disagree for {name}/{}: trapezoid {} vs Mann-Whitney {mw}",
                    kind.column(),
                    curve.auc
                )));
            }
        }
        variants.push(VariantEvaluation {
            name: name.clone(),
            scores,
            roc_sx,
            roc_sz,
        });
    }
    variants.sort_by(|a, b| {
        b.roc_sx
            .auc
            .partial_cmp(&a.roc_sx.auc)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.name.cmp(&b.name))
    });
    let best_sx = variants[0].name.clone();
    let best_sz = variants
        .iter()
        .max_by(|a, b| {
            a.roc_sz
                .auc
                .partial_cmp(&b.roc_sz.auc)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|v| v.name.clone())
        .expect("nonempty");
    Ok(ModelComparison {
        variants,
        best_sx,
        best_sz,
    })
}

/// `sample_id,label,s_x,s_z` rows.
pub fn write_scores_csv<W: Write>(scores: &[ScoredSample], w: &mut W) -> Result<()> {
    writeln!(w, "sample_id,label,s_x,s_z")?;
    for s in scores {
        writeln!(w, "{},{},{},{}", s.sample_id, s.label, s.s_x, s.s_z)?;
    }
    Ok(())
}

/// `gamma,fpr,tpr` rows.
pub fn write_roc_csv<W: Write>(curve: &RocCurve, w: &mut W) -> Result<()> {
    writeln!(w, "gamma,fpr,tpr")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", p.gamma, p.fpr, p.tpr)?;
    }
    Ok(())
}

/// `variant,auc_sx,auc_sz,best_sx,best_sz` rows (pre-sorted comparison).
pub fn write_auc_table_csv<W: Write>(cmp: &ModelComparison, w: &mut W) -> Result<()> {
    writeln!(w, "variant,auc_sx,auc_sz,best_sx,best_sz")?;
    for v in &cmp.variants {
        writeln!(
            w,
            "{},{},{},{},{}",
            v.name,
            v.roc_sx.auc,
            v.roc_sz.auc,
            v.name == cmp.best_sx,
            v.name == cmp.best_sz
        )?;
    }
    Ok(())
}

/// Minimal ROC plot: unit box, chance diagonal, one colored polyline per
/// curve. No text; the CSVs are the quantitative artifact.
pub fn plot_roc_curves(curves: &[(String, RocCurve)], path: &Path) -> Result<()> {
    use image::{Rgb, RgbImage};
    const SIZE: u32 = 512;
    const MARGIN: u32 = 24;
    const PALETTE: [[u8; 3]; 6] = [
        [214, 69, 65],
        [31, 119, 180],
        [44, 160, 44],
        [148, 103, 189],
        [255, 127, 14],
        [23, 190, 207],
    ];
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let span = (SIZE - 2 * MARGIN) as f64;
    let to_px = |fpr: f64, tpr: f64| -> (i64, i64) {
        (
            MARGIN as i64 + (fpr * span).round() as i64,
            (SIZE - MARGIN) as i64 - (tpr * span).round() as i64,
        )
    };
    let mut put = |x: i64, y: i64, c: Rgb<u8>| {
        if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    let mut line = |a: (i64, i64), b: (i64, i64), c: Rgb<u8>, dashed: bool| {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
        for t in 0..=steps {
            if dashed && (t / 4) % 2 == 1 {
                continue;
            }
            let x = a.0 + (b.0 - a.0) * t / steps;
            let y = a.1 + (b.1 - a.1) * t / steps;
            put(x, y, c);
            put(x + 1, y, c);
        }
    };
    // frame and chance diagonal
    let frame = Rgb([80, 80, 80]);
    line(to_px(0.0, 0.0), to_px(1.0, 0.0), frame, false);
    line(to_px(0.0, 0.0), to_px(0.0, 1.0), frame, false);
    line(to_px(1.0, 0.0), to_px(1.0, 1.0), frame, false);
    line(to_px(0.0, 1.0), to_px(1.0, 1.0), frame, false);
    line(to_px(0.0, 0.0), to_px(1.0, 1.0), Rgb([170, 170, 170]), true);
    for (i, (_, curve)) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for w in curve.points.windows(2) {
            line(
                to_px(w[0].fpr, w[0].tpr),
                to_px(w[1].fpr, w[1].tpr),
                color,
                false,
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
