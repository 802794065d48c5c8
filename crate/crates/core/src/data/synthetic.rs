//! Synthetic multispectral leaves with ground truth.
//!
//! Each sample is a lobed, randomly oriented ellipse with a midrib and
//! lateral veins on a dark background. Healthy tissue follows the usual
//! leaf signature: low visible reflectance (strong pigment absorption),
//! high NIR (internal scattering). Diseased leaves add circular powdery
//! lesions that pull the blue and red bands up toward 0.35-0.6; severe
//! lesions additionally depress NIR, the signature of advanced tissue
//! damage. Band levels are generator conventions chosen to encode those
//! qualitative contrasts, not measured data.
//!
//! Geometry is margin-bounded so that the augmentation pipeline (zoom
//! 1.1, translation 10%) can never push leaf pixels out of frame.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Dataset, Label, Severity, SpectralImage, BAND_NAMES};

/// Healthy band means in order B, G, R, NIR.
pub const HEALTHY_BAND_MEANS: [f64; 4] = [0.06, 0.12, 0.08, 0.55];

const BACKGROUND_LEVEL: f64 = 0.02;
const BACKGROUND_NOISE: f64 = 0.008;
const PIXEL_NOISE: f64 = 0.08;
const LEAF_BAND_JITTER: f64 = 0.05;

const LESION_TARGET_BR: (f64, f64) = (0.35, 0.60);
const LESION_TARGET_G: (f64, f64) = (0.18, 0.35);
const LESION_RADIUS: (f64, f64) = (0.025, 0.06);
const BLEND_SEVERE: (f64, f64) = (0.80, 0.95);
const BLEND_MILD: (f64, f64) = (0.45, 0.70);
const NIR_DROP_SEVERE: (f64, f64) = (0.35, 0.55);
/// A pixel belongs to the ground-truth lesion mask above this profile value.
const LESION_MASK_CUT: f64 = 0.3;

struct LeafShape {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos0: f64,
    sin0: f64,
    lobe_amp: [f64; 4],
    lobe_phase: [f64; 4],
}

impl LeafShape {
    fn sample(size: usize, rng: &mut Rng) -> Self {
        let s = size as f64;
        let mut lobe_amp = [0.0; 4];
        let mut lobe_phase = [0.0; 4];
        for k in 0..4 {
            lobe_amp[k] = rng.uniform_in(0.0, 0.04);
            lobe_phase[k] = rng.uniform_in(0.0, std::f64::consts::TAU);
        }
        let phi0 = rng.uniform_in(0.0, std::f64::consts::PI);
        // 0.28 * (1 + max lobes 0.16) + 0.02 center jitter stays under
        // MAX_LEAF_EXTENT, which the augmentation margin relies on
        let rx = rng.uniform_in(0.22, 0.28) * s;
        LeafShape {
            cx: s / 2.0 + rng.uniform_in(-0.02, 0.02) * s,
            cy: s / 2.0 + rng.uniform_in(-0.02, 0.02) * s,
            rx,
            ry: rx * rng.uniform_in(0.62, 0.85),
            cos0: phi0.cos(),
            sin0: phi0.sin(),
            lobe_amp,
            lobe_phase,
        }
    }

    /// Leaf-frame coordinates of a pixel.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.cx;
        let dy = y - self.cy;
        (
            dx * self.cos0 + dy * self.sin0,
            -dx * self.sin0 + dy * self.cos0,
        )
    }

    /// Normalized radius (<= boundary means inside) and boundary at the
    /// pixel's angular position.
    fn rho_boundary(&self, x: f64, y: f64) -> (f64, f64) {
        let (u, v) = self.local(x, y);
        let nu = u / self.rx;
        let nv = v / self.ry;
        let rho = (nu * nu + nv * nv).sqrt();
        let phi = nv.atan2(nu);
        let mut boundary = 1.0;
        for k in 0..4 {
            boundary += self.lobe_amp[k] * ((k as f64 + 2.0) * phi + self.lobe_phase[k]).cos();
        }
        (rho, boundary)
    }

}

struct Vein {
    // segment in leaf-frame coordinates
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    width: f64,
}

impl Vein {
    fn distance(&self, u: f64, v: f64) -> f64 {
        let dx = self.x1 - self.x0;
        let dy = self.y1 - self.y0;
        let len2 = dx * dx + dy * dy;
        let t = (((u - self.x0) * dx + (v - self.y0) * dy) / len2).clamp(0.0, 1.0);
        let px = self.x0 + t * dx - u;
        let py = self.y0 + t * dy - v;
        (px * px + py * py).sqrt()
    }
}

fn make_veins(shape: &LeafShape, size: usize, rng: &mut Rng) -> Vec<Vein> {
    let width = (0.010 * size as f64).max(0.6);
    let mut veins = vec![Vein {
        x0: -0.92 * shape.rx,
        y0: 0.0,
        x1: 0.92 * shape.rx,
        y1: 0.0,
        width,
    }];
    let n_side = 3 + rng.index(3); // 3..=5 laterals per side
    for side in [-1.0f64, 1.0] {
        for l in 0..n_side {
            let u0 = -0.6 * shape.rx + (l as f64 + rng.uniform_in(0.2, 0.8)) / n_side as f64 * 1.2 * shape.rx;
            let angle = rng.uniform_in(0.6, 1.0); // radians off the midrib
            let len = rng.uniform_in(0.5, 0.85) * shape.ry;
            veins.push(Vein {
                x0: u0,
                y0: 0.0,
                x1: u0 + len * angle.cos(),
                y1: side * len * angle.sin(),
                width: width * 0.7,
            });
        }
    }
    veins
}

struct Lesion {
    x: f64,
    y: f64,
    radius: f64,
    targets: [f64; 3], // B, G, R
    blend: f64,
    nir_drop: f64,
}

impl Lesion {
    /// Smooth radial bump: 1 at the center, 0 at the rim.
    fn profile(&self, x: f64, y: f64) -> f64 {
        let d2 = ((x - self.x).powi(2) + (y - self.y).powi(2)) / (self.radius * self.radius);
        if d2 >= 1.0 {
            0.0
        } else {
            (1.0 - d2) * (1.0 - d2)
        }
    }
}

fn make_lesions(shape: &LeafShape, size: usize, severity: Severity, rng: &mut Rng) -> Vec<Lesion> {
    let s = size as f64;
    let count = rng.int_in(1, 8) as usize;
    let blend_range = match severity {
        Severity::Severe => BLEND_SEVERE,
        Severity::Mild => BLEND_MILD,
    };
    (0..count)
        .map(|_| {
            // rejection-sample an interior center
            let (mut lx, mut ly) = (shape.cx, shape.cy);
            for _ in 0..200 {
                let x = shape.cx + rng.uniform_in(-1.0, 1.0) * shape.rx;
                let y = shape.cy + rng.uniform_in(-1.0, 1.0) * shape.rx;
                let (rho, boundary) = shape.rho_boundary(x, y);
                if rho <= 0.80 * boundary {
                    lx = x;
                    ly = y;
                    break;
                }
            }
            let nir_drop = match severity {
                Severity::Severe => rng.uniform_in(NIR_DROP_SEVERE.0, NIR_DROP_SEVERE.1),
                Severity::Mild => 0.0,
            };
            Lesion {
                x: lx,
                y: ly,
                radius: rng.uniform_in(LESION_RADIUS.0, LESION_RADIUS.1) * s,
                targets: [
                    rng.uniform_in(LESION_TARGET_BR.0, LESION_TARGET_BR.1),
                    rng.uniform_in(LESION_TARGET_G.0, LESION_TARGET_G.1),
                    rng.uniform_in(LESION_TARGET_BR.0, LESION_TARGET_BR.1),
                ],
                blend: rng.uniform_in(blend_range.0, blend_range.1),
                nir_drop,
            }
        })
        .collect()
}

fn render(
    size: usize,
    severity: Option<Severity>,
    rng: &mut Rng,
) -> (Tensor, Tensor, Option<Tensor>) {
    let shape = LeafShape::sample(size, rng);
    let veins = make_veins(&shape, size, rng);
    let lesions = severity.map(|sev| make_lesions(&shape, size, sev, rng));
    let band_jitter: Vec<f64> = (0..4)
        .map(|_| rng.normal(1.0, LEAF_BAND_JITTER).clamp(0.85, 1.15))
        .collect();

    let hw = size * size;
    let mut bands = vec![0.0f32; 4 * hw];
    let mut mask = vec![0.0f32; hw];
    let mut lesion_mask = vec![0.0f32; hw];

    for y in 0..size {
        for x in 0..size {
            let p = y * size + x;
            let (fx, fy) = (x as f64, y as f64);
            let (rho, boundary) = shape.rho_boundary(fx, fy);
            if rho > boundary {
                for b in 0..4 {
                    let v = BACKGROUND_LEVEL + BACKGROUND_NOISE * rng.normal(0.0, 1.0);
                    bands[b * hw + p] = v.clamp(0.0, 1.0) as f32;
                }
                continue;
            }
            mask[p] = 1.0;

            let shade = 1.0 - 0.06 * rho * rho;
            let (u, v) = shape.local(fx, fy);
            let on_vein = veins.iter().any(|vein| vein.distance(u, v) < vein.width);

            let mut values = [0.0f64; 4];
            for b in 0..4 {
                let vein_factor = if on_vein {
                    if b == 3 {
                        0.96
                    } else {
                        0.90
                    }
                } else {
                    1.0
                };
                values[b] = HEALTHY_BAND_MEANS[b] * band_jitter[b] * shade * vein_factor;
            }

            if let Some(lesions) = &lesions {
                let mut w_max = 0.0f64;
                for lesion in lesions {
                    let w = lesion.profile(fx, fy);
                    if w <= 0.0 {
                        continue;
                    }
                    w_max = w_max.max(w);
                    let a = lesion.blend * w;
                    for b in 0..3 {
                        values[b] = values[b] * (1.0 - a) + lesion.targets[b] * a;
                    }
                    values[3] *= 1.0 - lesion.nir_drop * w;
                }
                if w_max > LESION_MASK_CUT {
                    lesion_mask[p] = 1.0;
                }
            }

            for b in 0..4 {
                let noise = (1.0 + PIXEL_NOISE * rng.normal(0.0, 1.0)).clamp(0.5, 1.5);
                bands[b * hw + p] = (values[b] * noise).clamp(0.0, 1.0) as f32;
            }
        }
    }

    let bands = Tensor::new(bands, &[4, size, size]).expect("sized buffer");
    let mask = Tensor::new(mask, &[size, size]).expect("sized buffer");
    let lesion = severity
        .map(|_| Tensor::new(lesion_mask, &[size, size]).expect("sized buffer"));
    (bands, mask, lesion)
}

/// Generate `n_healthy` healthy and `n_diseased` diseased leaves at a
/// power-of-two size >= 32. Diseased samples alternate severe/mild.
pub fn generate_synthetic(
    n_healthy: usize,
    n_diseased: usize,
    size: usize,
    rng: &mut Rng,
) -> Result<Dataset> {
    if size < 32 || !size.is_power_of_two() {
        return Err(Error::parameter(format!(
            "synthetic size must be a power of two >= 32, got {size}"
        )));
    }
    let seed = rng.seed();
    let mut samples = Vec::with_capacity(n_healthy + n_diseased);
    for i in 0..n_healthy {
        let mut child = rng.child(i as u64);
        let (bands, mask, _) = render(size, None, &mut child);
        samples.push(SpectralImage {
            bands,
            mask,
            label: Label::Healthy,
            severity: None,
            provenance: format!("syn{seed}/h{i:03}"),
            lesion_mask: None,
        });
    }
    for j in 0..n_diseased {
        let severity = if j % 2 == 0 { Severity::Severe } else { Severity::Mild };
        let mut child = rng.child(1_000_000 + j as u64);
        let (bands, mask, lesion_mask) = render(size, Some(severity), &mut child);
        samples.push(SpectralImage {
            bands,
            mask,
            label: Label::Diseased,
            severity: Some(severity),
            provenance: format!("syn{seed}/d{j:03}"),
            lesion_mask,
        });
    }
    Ok(Dataset {
        samples,
        band_names: BAND_NAMES.iter().map(|s| s.to_string()).collect(),
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BAND_BLUE, BAND_NIR, BAND_RED};

    #[test]
    fn all_healthy_when_no_diseased_requested() {
        let ds = generate_synthetic(5, 0, 32, &mut Rng::seed_from(1)).unwrap();
        assert_eq!(ds.len(), 5);
        assert!(ds.samples.iter().all(|s| s.label == Label::Healthy));
        assert!(ds.samples.iter().all(|s| s.lesion_mask.is_none()));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(generate_synthetic(1, 0, 16, &mut Rng::seed_from(1)).is_err());
        assert!(generate_synthetic(1, 0, 48, &mut Rng::seed_from(1)).is_err());
    }

    #[test]
    fn lesions_raise_blue_reflectance() {
        let ds = generate_synthetic(0, 6, 64, &mut Rng::seed_from(2)).unwrap();
        for s in &ds.samples {
            let lesion = s.lesion_mask.as_ref().unwrap().data();
            let leaf = s.mask.data();
            let blue = s.band(BAND_BLUE);
            let mean = |keep: &dyn Fn(usize) -> bool| {
                let vals: Vec<f64> = (0..leaf.len())
                    .filter(|&i| keep(i))
                    .map(|i| blue[i] as f64)
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let inside = mean(&|i| lesion[i] > 0.5);
            let outside = mean(&|i| leaf[i] > 0.5 && lesion[i] < 0.5);
            assert!(inside > outside, "{}: {inside} <= {outside}", s.provenance);
        }
    }

    #[test]
    fn healthy_leaf_has_higher_mean_raw_vi_than_diseased() {
        let ds = generate_synthetic(4, 4, 64, &mut Rng::seed_from(3)).unwrap();
        let mean_vi = |s: &SpectralImage| {
            let v = s.raw_vi_inside_mask();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let healthy: Vec<f64> = ds.samples[..4].iter().map(mean_vi).collect();
        let diseased: Vec<f64> = ds.samples[4..].iter().map(mean_vi).collect();
        let h = healthy.iter().sum::<f64>() / 4.0;
        for (s, d) in ds.samples[4..].iter().zip(&diseased) {
            assert!(*d < h, "{}: diseased VI {d} not below healthy mean {h}", s.provenance);
        }
    }

    #[test]
    fn vi_threshold_detector_recalls_severe_lesions() {
        let ds = generate_synthetic(0, 10, 64, &mut Rng::seed_from(4)).unwrap();
        const CUT: f64 = 3.5;
        for s in ds.samples.iter().filter(|s| s.severity == Some(Severity::Severe)) {
            let lesion = s.lesion_mask.as_ref().unwrap().data();
            let leaf = s.mask.data();
            let red = s.band(BAND_RED);
            let nir = s.band(BAND_NIR);
            let mut hits = 0usize;
            let mut total = 0usize;
            for i in 0..leaf.len() {
                if leaf[i] > 0.5 && lesion[i] > 0.5 {
                    total += 1;
                    let vi = nir[i] as f64 / (red[i] as f64 + 1e-6);
                    if vi < CUT {
                        hits += 1;
                    }
                }
            }
            assert!(total > 0, "{} has no lesion pixels", s.provenance);
            let recall = hits as f64 / total as f64;
            assert!(recall > 0.7, "{}: recall {recall}", s.provenance);
        }
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let a = generate_synthetic(2, 2, 32, &mut Rng::seed_from(5)).unwrap();
        let b = generate_synthetic(2, 2, 32, &mut Rng::seed_from(5)).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            for (u, v) in x.bands.data().iter().zip(y.bands.data()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn blue_band_separates_populations_by_more_than_one_sigma() {
        let ds = generate_synthetic(12, 12, 64, &mut Rng::seed_from(6)).unwrap();
        let mean_blue = |s: &SpectralImage| {
            let blue = s.band(BAND_BLUE);
            let leaf = s.mask.data();
            let vals: Vec<f64> = (0..leaf.len())
                .filter(|&i| leaf[i] > 0.5)
                .map(|i| blue[i] as f64)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let healthy: Vec<f64> = ds.samples.iter().filter(|s| s.label == Label::Healthy).map(mean_blue).collect();
        let diseased: Vec<f64> = ds.samples.iter().filter(|s| s.label == Label::Diseased).map(mean_blue).collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (m, var.sqrt())
        };
        let (mh, sh) = stats(&healthy);
        let (md, sd) = stats(&diseased);
        let pooled = ((sh * sh + sd * sd) / 2.0).sqrt();
        assert!(
            md - mh > pooled,
            "effect size too small: healthy {mh}+-{sh}, diseased {md}+-{sd}"
        );
    }

    #[test]
    fn leaf_fits_inside_augmentation_margin() {
        let ds = generate_synthetic(6, 6, 64, &mut Rng::seed_from(7)).unwrap();
        for s in &ds.samples {
            let (h, w) = s.size();
            let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            for y in 0..h {
                for x in 0..w {
                    if s.mask.data()[y * w + x] > 0.5 {
                        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                        // zoom 1.1 plus 10% translation must stay in frame
                        assert!(
                            1.1 * d + 0.10 * w as f64 <= w as f64 / 2.0 + 1.0,
                            "{}: leaf pixel at distance {d}",
                            s.provenance
                        );
                    }
                }
            }
        }
    }
}
