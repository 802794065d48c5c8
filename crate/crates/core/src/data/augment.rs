//! Geometric augmentation: random compositions of translation (up to 10%
//! of the frame), rotation about the image center, horizontal/vertical
//! reflection, and zoom in [0.9, 1.1]. Bands resample bilinearly with
//! background fill 0; masks follow the same transform with nearest
//! neighbor, so labels and ground truth stay aligned.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Dataset, SpectralImage};

const MAX_TRANSLATE: f64 = 0.10;
const ZOOM_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Exact mirror flip; applying it twice returns the original image.
pub fn reflect(image: &SpectralImage, axis: Axis) -> SpectralImage {
    let (h, w) = image.size();
    let c = image.channels();
    let flip_plane = |src: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = match axis {
                    Axis::Horizontal => (y, w - 1 - x),
                    Axis::Vertical => (h - 1 - y, x),
                };
                out[y * w + x] = src[sy * w + sx];
            }
        }
        out
    };
    let mut bands = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        bands.extend(flip_plane(image.band(ch)));
    }
    SpectralImage {
        bands: Tensor::new(bands, &[c, h, w]).expect("shape preserved"),
        mask: Tensor::new(flip_plane(image.mask.data()), &[h, w]).expect("shape preserved"),
        lesion_mask: image
            .lesion_mask
            .as_ref()
            .map(|lm| Tensor::new(flip_plane(lm.data()), &[h, w]).expect("shape preserved")),
        ..image.clone()
    }
}

struct Warp {
    // inverse map: destination pixel -> source coordinates
    m: [[f64; 2]; 2],
    tx: f64,
    ty: f64,
    cx: f64,
    cy: f64,
}

impl Warp {
    fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.cx - self.tx;
        let dy = y - self.cy - self.ty;
        (
            self.m[0][0] * dx + self.m[0][1] * dy + self.cx,
            self.m[1][0] * dx + self.m[1][1] * dy + self.cy,
        )
    }
}

fn random_warp(h: usize, w: usize, rng: &mut Rng) -> Warp {
    let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
    let flip_h = rng.coin();
    let flip_v = rng.coin();
    let zoom = rng.uniform_in(ZOOM_RANGE.0, ZOOM_RANGE.1);
    let tx = rng.uniform_in(-MAX_TRANSLATE, MAX_TRANSLATE) * w as f64;
    let ty = rng.uniform_in(-MAX_TRANSLATE, MAX_TRANSLATE) * h as f64;

    // forward: p = C + t + z * R(theta) * F * (s - C); invert analytically
    let (cos, sin) = (theta.cos(), theta.sin());
    let fx = if flip_h { -1.0 } else { 1.0 };
    let fy = if flip_v { -1.0 } else { 1.0 };
    // inverse = (1/z) * F^-1 * R(-theta); F^-1 == F for axis flips
    let inv = 1.0 / zoom;
    let m = [
        [fx * inv * cos, fx * inv * sin],
        [-fy * inv * sin, fy * inv * cos],
    ];
    Warp {
        m,
        tx,
        ty,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
    }
}

fn bilinear(src: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    if x < -1.0 || y < -1.0 || x > w as f64 || y > h as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let dx = x - x0;
    let dy = y - y0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            src[yy as usize * w + xx as usize] as f64
        }
    };
    let v = at(y0, x0) * (1.0 - dx) * (1.0 - dy)
        + at(y0, x0 + 1.0) * dx * (1.0 - dy)
        + at(y0 + 1.0, x0) * (1.0 - dx) * dy
        + at(y0 + 1.0, x0 + 1.0) * dx * dy;
    v as f32
}

fn nearest(src: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let xi = x.round();
    let yi = y.round();
    if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
        0.0
    } else {
        src[yi as usize * w + xi as usize]
    }
}

fn warp_image(image: &SpectralImage, warp: &Warp) -> SpectralImage {
    let (h, w) = image.size();
    let c = image.channels();
    let mut bands = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let src = image.band(ch);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = warp.sample(x as f64, y as f64);
                bands.push(bilinear(src, h, w, sx, sy));
            }
        }
    }
    let warp_mask = |src: &[f32]| -> Vec<f32> {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = warp.sample(x as f64, y as f64);
                out.push(nearest(src, h, w, sx, sy));
            }
        }
        out
    };
    SpectralImage {
        bands: Tensor::new(bands, &[c, h, w]).expect("shape preserved"),
        mask: Tensor::new(warp_mask(image.mask.data()), &[h, w]).expect("shape preserved"),
        lesion_mask: image
            .lesion_mask
            .as_ref()
            .map(|lm| Tensor::new(warp_mask(lm.data()), &[h, w]).expect("shape preserved")),
        ..image.clone()
    }
}

/// Grow `dataset` to `target_count` samples: the originals, then warped
/// copies cycling through the sources in order.
pub fn augment(dataset: &Dataset, rng: &mut Rng, target_count: usize) -> Result<Dataset> {
    if target_count < dataset.len() {
        return Err(Error::parameter(format!(
            "target_count {target_count} is below the current size {}",
            dataset.len()
        )));
    }
    let mut samples = dataset.samples.clone();
    let n = dataset.len();
    for i in 0..target_count - n {
        let source = &dataset.samples[i % n];
        let (h, w) = source.size();
        let warp = random_warp(h, w, rng);
        let mut out = warp_image(source, &warp);
        out.provenance = format!("{}+aug{}", source.provenance, i);
        samples.push(out);
    }
    Ok(Dataset {
        samples,
        band_names: dataset.band_names.clone(),
        seed: dataset.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Label, BAND_NAMES};

    fn leafish(seed: u64) -> Dataset {
        generate_synthetic(3, 2, 64, &mut Rng::seed_from(seed)).unwrap()
    }

    #[test]
    fn target_equal_to_size_is_a_noop() {
        let ds = leafish(1);
        let mut rng = Rng::seed_from(2);
        let out = augment(&ds, &mut rng, ds.len()).unwrap();
        assert_eq!(out.len(), ds.len());
        for (a, b) in ds.samples.iter().zip(&out.samples) {
            assert_eq!(a.bands.data(), b.bands.data());
        }
    }

    #[test]
    fn reflection_is_an_involution() {
        let ds = leafish(3);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let twice = reflect(&reflect(&ds.samples[0], axis), axis);
            assert_eq!(twice.bands.data(), ds.samples[0].bands.data());
            assert_eq!(twice.mask.data(), ds.samples[0].mask.data());
        }
    }

    #[test]
    fn augmented_leaf_area_stays_within_zoom_bounds() {
        let ds = leafish(4);
        let mut rng = Rng::seed_from(5);
        let out = augment(&ds, &mut rng, ds.len() * 4).unwrap();
        for (i, sample) in out.samples.iter().enumerate().skip(ds.len()) {
            let source = &ds.samples[(i - ds.len()) % ds.len()];
            let area = |m: &Tensor| m.data().iter().filter(|&&v| v > 0.5).count() as f64;
            let ratio = area(&sample.mask) / area(&source.mask);
            assert!(
                (0.8..=1.25).contains(&ratio),
                "sample {i}: area ratio {ratio}"
            );
        }
    }

    #[test]
    fn augmentation_preserves_labels_and_value_range() {
        let ds = leafish(6);
        let mut rng = Rng::seed_from(7);
        let out = augment(&ds, &mut rng, ds.len() * 3).unwrap();
        assert_eq!(out.band_names, BAND_NAMES.map(String::from).to_vec());
        for (i, s) in out.samples.iter().enumerate().skip(ds.len()) {
            let source = &ds.samples[(i - ds.len()) % ds.len()];
            assert_eq!(s.label, source.label);
            assert_eq!(s.severity, source.severity);
            assert!(s.bands.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            if s.label == Label::Diseased {
                assert!(s.lesion_mask.is_some());
            }
        }
    }

    #[test]
    fn same_seed_reproduces_augmentation() {
        let ds = leafish(8);
        let a = augment(&ds, &mut Rng::seed_from(9), 10).unwrap();
        let b = augment(&ds, &mut Rng::seed_from(9), 10).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.bands.data(), y.bands.data());
        }
    }
}
