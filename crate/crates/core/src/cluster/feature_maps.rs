//! Bottleneck visualization: every feature map as a normalized grayscale
//! tile, brighter meaning higher activation, tiled into one grid image
//! with 1-based index labels.

use std::path::Path;

use image::GrayImage;

use crate::data::SpectralImage;
use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::tensor::Tensor;

/// 5x7 digit glyphs, one bit per pixel, top row first.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02], // 4
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E], // 5
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E], // 6
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08], // 7
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E], // 8
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C], // 9
];

const SEPARATOR: u32 = 2;
const MIN_TILE: usize = 32;

fn stamp_number(img: &mut GrayImage, x0: u32, y0: u32, number: usize) {
    let text: Vec<usize> = number
        .to_string()
        .bytes()
        .map(|b| (b - b'0') as usize)
        .collect();
    // dark backing box so the label reads on any tile
    let width = (text.len() as u32) * 6 + 2;
    for y in 0..9u32 {
        for x in 0..width {
            if let Some(p) = img.get_pixel_mut_checked(x0 + x, y0 + y) {
                p.0 = [0];
            }
        }
    }
    for (i, &d) in text.iter().enumerate() {
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..5u32 {
                if bits & (0x10 >> col) != 0 {
                    let px = x0 + 1 + i as u32 * 6 + col;
                    let py = y0 + 1 + row as u32;
                    if let Some(p) = img.get_pixel_mut_checked(px, py) {
                        p.0 = [255];
                    }
                }
            }
        }
    }
}

/// Render a `[C,h,w]` feature stack as a labeled tile grid. Each tile is
/// min-max normalized on its own; a constant map renders mid-gray.
pub fn render_feature_grid(features: &Tensor) -> Result<GrayImage> {
    let (c, h, w) = match features.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::shape(format!(
                "feature grid expects [C,h,w], got {s:?}"
            )))
        }
    };
    let scale = MIN_TILE.div_ceil(h.max(1)).max(1);
    let (th, tw) = (h * scale, w * scale);
    let cols = (c as f64).sqrt().ceil() as usize;
    let grid_rows = c.div_ceil(cols);
    let img_w = cols as u32 * (tw as u32 + SEPARATOR) + SEPARATOR;
    let img_h = grid_rows as u32 * (th as u32 + SEPARATOR) + SEPARATOR;
    let mut img = GrayImage::from_pixel(img_w, img_h, image::Luma([32]));

    let plane = h * w;
    for f in 0..c {
        let map = &features.data()[f * plane..(f + 1) * plane];
        let min = map.iter().cloned().fold(f32::MAX, f32::min);
        let max = map.iter().cloned().fold(f32::MIN, f32::max);
        let norm = |v: f32| -> u8 {
            if max > min {
                (((v - min) / (max - min)) * 255.0).round() as u8
            } else {
                128 // constant-map convention
            }
        };
        let gx = (f % cols) as u32 * (tw as u32 + SEPARATOR) + SEPARATOR;
        let gy = (f / cols) as u32 * (th as u32 + SEPARATOR) + SEPARATOR;
        for y in 0..th {
            for x in 0..tw {
                let v = norm(map[(y / scale) * w + x / scale]);
                img.put_pixel(gx + x as u32, gy + y as u32, image::Luma([v]));
            }
        }
        stamp_number(&mut img, gx + 1, gy + 1, f + 1);
    }
    Ok(img)
}

/// Encode one sample and write its bottleneck grid as a PNG.
/// Returns the number of tiles written.
pub fn export_feature_maps(model: &ModelState, image: &SpectralImage, path: &Path) -> Result<usize> {
    let (h, w) = image.size();
    let x = Tensor::new(image.bands.data().to_vec(), &[1, image.channels(), h, w])?;
    let z = model.encode(&x)?;
    let (c, bh, bw) = model.spec.bottleneck_shape();
    let features = Tensor::new(z.data().to_vec(), &[c, bh, bw])?;
    let grid = render_feature_grid(&features)?;
    grid.save(path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::nn::{ModelSpec, ModelState};
    use crate::rng::Rng;

    #[test]
    fn grid_has_one_tile_per_feature() {
        let features = Tensor::new((0..4 * 16).map(|v| v as f32).collect(), &[4, 4, 4]).unwrap();
        let img = render_feature_grid(&features).unwrap();
        // 4 tiles in a 2x2 grid of 32px tiles with separators
        assert_eq!(img.width(), 2 * 34 + 2);
        assert_eq!(img.height(), 2 * 34 + 2);
    }

    #[test]
    fn constant_map_renders_mid_gray() {
        let features = Tensor::full(&[1, 4, 4], 0.7);
        let img = render_feature_grid(&features).unwrap();
        // read a pixel away from the label corner
        let p = img.get_pixel(30, 30).0[0];
        assert_eq!(p, 128);
    }

    #[test]
    fn clu_ae_grid_exports_64_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps.png");
        let mut rng = Rng::seed_from(1);
        let ds = generate_synthetic(1, 0, 32, &mut rng).unwrap().with_vi_channel().unwrap();
        let spec = ModelSpec::clu_ae(5, (32, 32)).unwrap();
        let mut model = ModelState::new(spec).unwrap();
        model.he_init(&mut rng);
        let tiles = export_feature_maps(&model, &ds.samples[0], &path).unwrap();
        assert_eq!(tiles, 64);
        let img = image::open(&path).unwrap().to_luma8();
        assert!(img.width() > 0);
    }
}
