//! Reflectance calibration, min-max normalization, and resizing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::SpectralImage;

/// Reflectances of the three reference targets imaged with every frame.
pub const REFLECTANCE_REFERENCES: [f64; 3] = [0.02, 0.50, 0.99];

/// Measured grey levels of the three reflectance references, plus the
/// affine fit mapping grey level to reflectance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CalibrationTriple {
    pub grey: [f64; 3],
    pub gain: f64,
    pub offset: f64,
}

impl CalibrationTriple {
    /// Least-squares line through the three (grey, reflectance) points.
    /// The grey levels must increase with reflectance.
    pub fn new(g02: f64, g50: f64, g99: f64) -> Result<Self> {
        if !(g02 < g50 && g50 < g99) {
            return Err(Error::degenerate(format!(
                "calibration grey levels must be strictly increasing, got {g02}, {g50}, {g99}"
            )));
        }
        let grey = [g02, g50, g99];
        let g_mean: f64 = grey.iter().sum::<f64>() / 3.0;
        let r_mean: f64 = REFLECTANCE_REFERENCES.iter().sum::<f64>() / 3.0;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (g, r) in grey.iter().zip(REFLECTANCE_REFERENCES) {
            cov += (g - g_mean) * (r - r_mean);
            var += (g - g_mean) * (g - g_mean);
        }
        let gain = cov / var;
        let offset = r_mean - gain * g_mean;
        Ok(CalibrationTriple { grey, gain, offset })
    }
}

/// Map raw grey levels to reflectance through the fitted line, clipped
/// to `[0, 1.05]` (specular highlights can exceed the brightest target).
pub fn calibrate(raw_band: &Tensor, triple: &CalibrationTriple) -> Result<Tensor> {
    if raw_band.shape().len() != 2 {
        return Err(Error::shape(format!(
            "calibrate expects a [H,W] band, got {:?}",
            raw_band.shape()
        )));
    }
    let data: Vec<f32> = raw_band
        .data()
        .iter()
        .map(|&g| ((triple.gain * g as f64 + triple.offset).clamp(0.0, 1.05)) as f32)
        .collect();
    Tensor::new(data, raw_band.shape())
}

/// Min-max normalize one band's values to span exactly `[0,1]`.
pub fn normalize_band(values: &[f32]) -> Result<Vec<f32>> {
    let min = values.iter().cloned().fold(f32::MAX, f32::min);
    let max = values.iter().cloned().fold(f32::MIN, f32::max);
    if !(max > min) {
        return Err(Error::degenerate(format!(
            "constant band (min == max == {min}) cannot be normalized"
        )));
    }
    let span = max - min;
    Ok(values.iter().map(|&v| (v - min) / span).collect())
}

/// Per-band min-max normalization of a `[C,H,W]` stack.
pub fn normalize_minmax(bands: &Tensor) -> Result<Tensor> {
    let shape = bands.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "normalize_minmax expects [C,H,W], got {shape:?}"
        )));
    }
    let plane = shape[1] * shape[2];
    let mut out = Vec::with_capacity(bands.numel());
    for c in 0..shape[0] {
        let band = &bands.data()[c * plane..(c + 1) * plane];
        let normalized = normalize_band(band)
            .map_err(|_| Error::degenerate(format!("band {c} is constant; cannot normalize")))?;
        out.extend(normalized);
    }
    Tensor::new(out, shape)
}

/// Area-average downsample of one plane from `src` (side `s`) to side `t`.
/// Each target pixel integrates its exact source rectangle, so the mean
/// intensity is preserved.
fn area_downsample(src: &[f32], sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f32> {
    let ry = sh as f64 / th as f64;
    let rx = sw as f64 / tw as f64;
    let mut out = vec![0.0f32; th * tw];
    for ty in 0..th {
        let y0 = ty as f64 * ry;
        let y1 = (ty + 1) as f64 * ry;
        for tx in 0..tw {
            let x0 = tx as f64 * rx;
            let x1 = (tx + 1) as f64 * rx;
            let mut acc = 0.0f64;
            let mut ys = y0;
            while ys < y1 - 1e-12 {
                let yc = ys.floor() as usize;
                let ye = ((yc + 1) as f64).min(y1);
                let wy = ye - ys;
                let mut xs = x0;
                while xs < x1 - 1e-12 {
                    let xc = xs.floor() as usize;
                    let xe = ((xc + 1) as f64).min(x1);
                    let wx = xe - xs;
                    acc += src[yc.min(sh - 1) * sw + xc.min(sw - 1)] as f64 * wy * wx;
                    xs = xe;
                }
                ys = ye;
            }
            out[ty * tw + tx] = (acc / (ry * rx)) as f32;
        }
    }
    out
}

fn nearest_downsample(src: &[f32], sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; th * tw];
    for ty in 0..th {
        let sy = (((ty as f64 + 0.5) * sh as f64 / th as f64) as usize).min(sh - 1);
        for tx in 0..tw {
            let sx = (((tx as f64 + 0.5) * sw as f64 / tw as f64) as usize).min(sw - 1);
            out[ty * tw + tx] = src[sy * sw + sx];
        }
    }
    out
}

/// Square crop around the leaf followed by an area-average downsample.
///
/// The crop box is the mask's bounding box padded out to a square (the
/// full frame when the mask is empty), clamped to the image; bands are
/// box-filtered to `target`, masks resampled by nearest neighbor.
pub fn resize_to(image: &SpectralImage, target: (usize, usize)) -> Result<SpectralImage> {
    if target.0 != target.1 {
        return Err(Error::parameter(format!(
            "resize target must be square, got {}x{}",
            target.0, target.1
        )));
    }
    let (h, w) = image.size();
    let t = target.0;
    if t > h || t > w {
        return Err(Error::parameter(format!(
            "resize target {t} exceeds source {h}x{w}"
        )));
    }

    // Bounding box of the mask, whole frame if empty.
    let mdata = image.mask.data();
    let mut y0 = h;
    let mut y1 = 0usize;
    let mut x0 = w;
    let mut x1 = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mdata[y * w + x] > 0.5 {
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
                x0 = x0.min(x);
                x1 = x1.max(x + 1);
            }
        }
    }
    if y0 >= y1 {
        y0 = 0;
        y1 = h;
        x0 = 0;
        x1 = w;
    }

    // Pad the box out to a square no smaller than the target, clamped.
    let side = (y1 - y0).max(x1 - x0).max(t).min(h.min(w));
    let center_y = (y0 + y1) / 2;
    let center_x = (x0 + x1) / 2;
    let top = center_y.saturating_sub(side / 2).min(h - side);
    let left = center_x.saturating_sub(side / 2).min(w - side);

    let crop_plane = |plane: &[f32]| -> Vec<f32> {
        let mut out = Vec::with_capacity(side * side);
        for y in top..top + side {
            out.extend_from_slice(&plane[y * w + left..y * w + left + side]);
        }
        out
    };

    let c = image.channels();
    let mut band_data = Vec::with_capacity(c * t * t);
    for ch in 0..c {
        let cropped = crop_plane(image.band(ch));
        band_data.extend(area_downsample(&cropped, side, side, t, t));
    }
    let mask = nearest_downsample(&crop_plane(mdata), side, side, t, t);
    let lesion_mask = image
        .lesion_mask
        .as_ref()
        .map(|lm| -> Result<Tensor> {
            let cropped = crop_plane(lm.data());
            Tensor::new(nearest_downsample(&cropped, side, side, t, t), &[t, t])
        })
        .transpose()?;

    Ok(SpectralImage {
        bands: Tensor::new(band_data, &[c, t, t])?,
        mask: Tensor::new(mask, &[t, t])?,
        lesion_mask,
        ..image.clone()
    })
}
