//! Leaf segmentation from the NIR band, where leaf tissue is far
//! brighter than the dark background: Otsu threshold, largest connected
//! component, hole filling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Segmentation result; `empty` flags a frame with no separable leaf
/// (unimodal histogram or negligible foreground).
#[derive(Debug, Clone)]
pub struct MaskOutcome {
    pub mask: Tensor,
    pub empty: bool,
}

const HIST_BINS: usize = 256;
const MIN_FOREGROUND_FRACTION: f64 = 0.005;
/// Minimum distance between the two Otsu class means, in band units.
/// Noise on a flat frame splits into classes a few grey levels apart;
/// a leaf against the dark background separates by half the range.
const MIN_CLASS_SEPARATION: f64 = 0.15;

/// Otsu threshold over a [0,1] band, plus the two class means at the
/// optimum; `None` when the histogram cannot be split at all.
fn otsu_threshold(values: &[f32]) -> Option<(f64, f64, f64)> {
    let mut hist = [0usize; HIST_BINS];
    for &v in values {
        let bin = ((v.clamp(0.0, 1.0) as f64) * (HIST_BINS - 1) as f64).round() as usize;
        hist[bin] += 1;
    }
    let total = values.len() as f64;
    let total_mean: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &n)| i as f64 * n as f64)
        .sum::<f64>()
        / total;

    let mut best: Option<(f64, usize, f64, f64)> = None;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for t in 0..HIST_BINS - 1 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        let m0 = sum0 / w0;
        let m1 = (total_mean * total - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.map_or(true, |(b, _, _, _)| between > b) {
            best = Some((between, t, m0, m1));
        }
    }
    let scale = (HIST_BINS - 1) as f64;
    best.map(|(_, t, m0, m1)| (t as f64 / scale, m0 / scale, m1 / scale))
}

/// Keep only the largest 4-connected foreground component.
fn largest_component(fg: &mut [u8], h: usize, w: usize) {
    let mut labels = vec![0u32; h * w];
    let mut next = 1u32;
    let mut best_label = 0u32;
    let mut best_size = 0usize;
    let mut queue = Vec::new();
    for start in 0..h * w {
        if fg[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = next;
        next += 1;
        let mut size = 0usize;
        queue.push(start);
        labels[start] = label;
        while let Some(p) = queue.pop() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if fg[q] != 0 && labels[q] == 0 {
                    labels[q] = label;
                    queue.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if size > best_size {
            best_size = size;
            best_label = label;
        }
    }
    for (f, &l) in fg.iter_mut().zip(&labels) {
        *f = (l == best_label && best_label != 0) as u8;
    }
}

/// Set to foreground every background region not connected to the border.
fn fill_holes(fg: &mut [u8], h: usize, w: usize) {
    let mut outside = vec![false; h * w];
    let mut queue = Vec::new();
    let push = |p: usize, outside: &mut Vec<bool>, queue: &mut Vec<usize>, fg: &[u8]| {
        if !outside[p] && fg[p] == 0 {
            outside[p] = true;
            queue.push(p);
        }
    };
    for x in 0..w {
        push(x, &mut outside, &mut queue, fg);
        push((h - 1) * w + x, &mut outside, &mut queue, fg);
    }
    for y in 0..h {
        push(y * w, &mut outside, &mut queue, fg);
        push(y * w + w - 1, &mut outside, &mut queue, fg);
    }
    while let Some(p) = queue.pop() {
        let (y, x) = (p / w, p % w);
        if y > 0 {
            push(p - w, &mut outside, &mut queue, fg);
        }
        if y + 1 < h {
            push(p + w, &mut outside, &mut queue, fg);
        }
        if x > 0 {
            push(p - 1, &mut outside, &mut queue, fg);
        }
        if x + 1 < w {
            push(p + 1, &mut outside, &mut queue, fg);
        }
    }
    for (f, &out) in fg.iter_mut().zip(&outside) {
        if *f == 0 && !out {
            *f = 1;
        }
    }
}

/// Binary leaf mask from a normalized NIR band.
pub fn leaf_mask(nir_band: &Tensor) -> Result<MaskOutcome> {
    let (h, w) = match nir_band.shape() {
        [h, w] => (*h, *w),
        s => {
            return Err(Error::shape(format!(
                "leaf_mask expects a [H,W] band, got {s:?}"
            )))
        }
    };
    let values = nir_band.data();
    let empty = |_reason: &str| -> Result<MaskOutcome> {
        Ok(MaskOutcome {
            mask: Tensor::zeros(&[h, w]),
            empty: true,
        })
    };

    let Some((threshold, m0, m1)) = otsu_threshold(values) else {
        return empty("unimodal histogram");
    };
    if m1 - m0 < MIN_CLASS_SEPARATION {
        return empty("classes not separable");
    }
    let mut fg: Vec<u8> = values
        .iter()
        .map(|&v| (v as f64 > threshold) as u8)
        .collect();
    let count = fg.iter().filter(|&&v| v == 1).count();
    if (count as f64) < MIN_FOREGROUND_FRACTION * (h * w) as f64 {
        return empty("foreground below minimum fraction");
    }
    largest_component(&mut fg, h, w);
    fill_holes(&mut fg, h, w);
    let mask = Tensor::new(fg.iter().map(|&v| v as f32).collect(), &[h, w])?;
    Ok(MaskOutcome { mask, empty: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn disk_frame(size: usize, cx: f64, cy: f64, r: f64, noise: f64, seed: u64) -> (Tensor, Vec<bool>) {
        let mut rng = Rng::seed_from(seed);
        let mut data = Vec::with_capacity(size * size);
        let mut truth = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let inside = d <= r;
                let base = if inside { 0.8 } else { 0.05 };
                data.push((base + rng.uniform_in(-noise, noise)) as f32);
                truth.push(inside);
            }
        }
        (Tensor::new(data, &[size, size]).unwrap(), truth)
    }

    #[test]
    fn disk_is_recovered_within_one_pixel_of_boundary() {
        let size = 64;
        let (cx, cy, r) = (31.0, 33.0, 18.0);
        let (band, truth) = disk_frame(size, cx, cy, r, 0.03, 5);
        let out = leaf_mask(&band).unwrap();
        assert!(!out.empty);
        for y in 0..size {
            for x in 0..size {
                let got = out.mask.data()[y * size + x] > 0.5;
                let want = truth[y * size + x];
                if got != want {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    assert!(
                        (d - r).abs() <= 1.5,
                        "mismatch at ({x},{y}), distance {d:.2} vs radius {r}"
                    );
                }
            }
        }
    }

    #[test]
    fn all_dark_frame_yields_empty_warning() {
        let mut rng = Rng::seed_from(6);
        let data: Vec<f32> = (0..32 * 32).map(|_| rng.uniform_in(0.0, 0.02) as f32).collect();
        let band = Tensor::new(data, &[32, 32]).unwrap();
        let out = leaf_mask(&band).unwrap();
        assert!(out.empty);
        assert!(out.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_frame_yields_empty_warning() {
        let band = Tensor::full(&[16, 16], 0.5);
        let out = leaf_mask(&band).unwrap();
        assert!(out.empty);
    }

    #[test]
    fn mask_is_strictly_binary_and_holes_fill() {
        let size = 48;
        let (band, _) = disk_frame(size, 24.0, 24.0, 15.0, 0.02, 7);
        // punch a dark hole inside the disk
        let mut data = band.data().to_vec();
        for y in 20..26 {
            for x in 20..26 {
                data[y * size + x] = 0.05;
            }
        }
        let band = Tensor::new(data, &[size, size]).unwrap();
        let out = leaf_mask(&band).unwrap();
        assert!(!out.empty);
        assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        // the hole is inside the leaf
        assert_eq!(out.mask.data()[22 * size + 22], 1.0);
    }

    #[test]
    fn smaller_blob_is_dropped() {
        let size = 48;
        let (band, _) = disk_frame(size, 16.0, 16.0, 12.0, 0.02, 8);
        let mut data = band.data().to_vec();
        // second, smaller bright blob in the opposite corner
        for y in 38..44 {
            for x in 38..44 {
                data[y * size + x] = 0.8;
            }
        }
        let band = Tensor::new(data, &[size, size]).unwrap();
        let out = leaf_mask(&band).unwrap();
        assert_eq!(out.mask.data()[40 * size + 40], 0.0);
        assert_eq!(out.mask.data()[16 * size + 16], 1.0);
    }
}
