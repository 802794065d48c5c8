//! Raw acquisition layout: one directory per sample holding 16-bit
//! grayscale PNGs named `b430.png`, `g530.png`, `r685.png`, `nir740.png`,
//! a `calibration.json` with the reference-target grey levels per band,
//! and a `label.txt`.
//!
//! Ingestion runs calibration, per-band min-max normalization, NIR leaf
//! masking, the mask-guided square crop and area-average resize, and a
//! final normalization so every stored band spans [0,1].

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{
    calibrate, leaf_mask, normalize_minmax, resize_to, CalibrationTriple, Dataset, Label,
    Severity, SpectralImage, BAND_NAMES, BAND_NIR,
};

#[derive(Deserialize)]
struct CalibrationFile(BTreeMap<String, [f64; 3]>);

pub struct IngestReport {
    pub dataset: Dataset,
    /// Per-sample notes (empty masks and similar non-fatal conditions).
    pub warnings: Vec<String>,
}

fn read_band_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.into_raw().iter().map(|&v| v as f32).collect();
    Tensor::new(data, &[h, w])
}

fn parse_label(text: &str) -> Result<(Label, Option<Severity>)> {
    let mut label = None;
    let mut severity = None;
    for token in text.split_whitespace() {
        match token.to_ascii_lowercase().as_str() {
            "healthy" => label = Some(Label::Healthy),
            "diseased" => label = Some(Label::Diseased),
            "unknown" => label = Some(Label::Unknown),
            "mild" => severity = Some(Severity::Mild),
            "severe" => severity = Some(Severity::Severe),
            other => return Err(Error::data(format!("unrecognized label token '{other}'"))),
        }
    }
    let label = label.ok_or_else(|| Error::data("label.txt names no label"))?;
    Ok((label, severity))
}

fn ingest_sample(dir: &Path, target: (usize, usize)) -> Result<(SpectralImage, Option<String>)> {
    let calib_text = std::fs::read_to_string(dir.join("calibration.json"))
        .map_err(|e| Error::data(format!("{}: calibration.json: {e}", dir.display())))?;
    let calib: CalibrationFile = serde_json::from_str(&calib_text)?;

    let mut planes = Vec::with_capacity(4);
    let mut size = None;
    for name in BAND_NAMES {
        let raw = read_band_png(&dir.join(format!("{name}.png")))?;
        match size {
            None => size = Some((raw.shape()[0], raw.shape()[1])),
            Some(s) => {
                if (raw.shape()[0], raw.shape()[1]) != s {
                    return Err(Error::data(format!(
                        "{}: band {name} size differs from the others",
                        dir.display()
                    )));
                }
            }
        }
        let grey = calib
            .0
            .get(name)
            .ok_or_else(|| Error::data(format!("calibration.json lacks band '{name}'")))?;
        let triple = CalibrationTriple::new(grey[0], grey[1], grey[2])?;
        planes.push(calibrate(&raw, &triple)?);
    }
    let (h, w) = size.expect("four bands read");
    let mut stacked = Vec::with_capacity(4 * h * w);
    for p in &planes {
        stacked.extend_from_slice(p.data());
    }
    let bands = normalize_minmax(&Tensor::new(stacked, &[4, h, w])?)?;

    let nir = Tensor::new(
        bands.data()[BAND_NIR * h * w..(BAND_NIR + 1) * h * w].to_vec(),
        &[h, w],
    )?;
    let outcome = leaf_mask(&nir)?;
    let warning = outcome
        .empty
        .then(|| format!("{}: no leaf found in the NIR band", dir.display()));

    let (label, severity) = parse_label(
        &std::fs::read_to_string(dir.join("label.txt"))
            .map_err(|e| Error::data(format!("{}: label.txt: {e}", dir.display())))?,
    )?;

    let image = SpectralImage {
        bands,
        mask: outcome.mask,
        label,
        severity,
        provenance: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        lesion_mask: None,
    };
    let resized = resize_to(&image, target)?;
    let bands = normalize_minmax(&resized.bands)?;
    Ok((SpectralImage { bands, ..resized }, warning))
}

/// Ingest every sample directory under `root`, in name order.
pub fn ingest_dataset(root: &Path, target_size: usize) -> Result<IngestReport> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(format!(
            "no sample directories under {}",
            root.display()
        )));
    }
    let mut samples = Vec::with_capacity(dirs.len());
    let mut warnings = Vec::new();
    for dir in &dirs {
        let (sample, warning) = ingest_sample(dir, (target_size, target_size))?;
        samples.push(sample);
        warnings.extend(warning);
    }
    Ok(IngestReport {
        dataset: Dataset {
            samples,
            band_names: BAND_NAMES.iter().map(|s| s.to_string()).collect(),
            seed: None,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use image::{ImageBuffer, Luma};

    /// Build one on-disk sample: a bright disk on a dark field, imaged
    /// through a synthetic grey-level response per band.
    fn write_sample(dir: &Path, label: &str, seed: u64) {
        std::fs::create_dir_all(dir).unwrap();
        let size = 96u32;
        let mut rng = Rng::seed_from(seed);
        // per-band affine grey response: grey = scale * reflectance + offset
        let responses = [(40000.0, 2000.0), (38000.0, 1500.0), (41000.0, 2500.0), (36000.0, 1000.0)];
        let reflectances = [0.05, 0.10, 0.08, 0.55];
        let mut calib = BTreeMap::new();
        for (name, (scale, offset)) in BAND_NAMES.iter().zip(responses) {
            let img = ImageBuffer::from_fn(size, size, |x, y| {
                let d = ((x as f64 - 48.0).powi(2) + (y as f64 - 44.0).powi(2)).sqrt();
                let idx = BAND_NAMES.iter().position(|n| n == name).unwrap();
                let r = if d < 30.0 { reflectances[idx] } else { 0.01 };
                let noisy = r * (1.0 + 0.02 * rng.normal(0.0, 1.0));
                Luma([(scale * noisy + offset).clamp(0.0, 65535.0) as u16])
            });
            img.save(dir.join(format!("{name}.png"))).unwrap();
            calib.insert(
                name.to_string(),
                [
                    scale * 0.02 + offset,
                    scale * 0.50 + offset,
                    scale * 0.99 + offset,
                ],
            );
        }
        std::fs::write(
            dir.join("calibration.json"),
            serde_json::to_string(&calib).unwrap(),
        )
        .unwrap();
        std::fs::write(dir.join("label.txt"), label).unwrap();
    }

    #[test]
    fn ingests_samples_in_name_order() {
        let root = tempfile::tempdir().unwrap();
        write_sample(&root.path().join("s01"), "healthy", 1);
        write_sample(&root.path().join("s00"), "diseased severe", 2);
        let report = ingest_dataset(root.path(), 64).unwrap();
        assert_eq!(report.dataset.len(), 2);
        assert!(report.warnings.is_empty());
        assert_eq!(report.dataset.samples[0].provenance, "s00");
        assert_eq!(report.dataset.samples[0].label, Label::Diseased);
        assert_eq!(report.dataset.samples[0].severity, Some(Severity::Severe));
        assert_eq!(report.dataset.samples[1].label, Label::Healthy);
        for s in &report.dataset.samples {
            assert_eq!(s.size(), (64, 64));
            assert_eq!(s.channels(), 4);
            assert!(s.bands.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            // the disk dominates the crop
            let leaf_frac =
                s.mask.data().iter().filter(|&&v| v > 0.5).count() as f64 / (64.0 * 64.0);
            assert!(leaf_frac > 0.4, "leaf fraction {leaf_frac}");
        }
    }

    #[test]
    fn missing_band_is_a_data_error() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("s00");
        write_sample(&dir, "healthy", 3);
        std::fs::remove_file(dir.join("r685.png")).unwrap();
        assert!(matches!(
            ingest_dataset(root.path(), 64),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn bad_label_is_a_data_error() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("s00");
        write_sample(&dir, "sick", 4);
        assert!(matches!(
            ingest_dataset(root.path(), 64),
            Err(Error::Data(_))
        ));
    }
}
