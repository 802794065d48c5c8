//! Multispectral leaf datasets.
//!
//! A [`SpectralImage`] carries calibrated, normalized band planes in the
//! fixed order blue (430nm), green (530nm), red (685nm), NIR (740nm),
//! optionally followed by the NIR/R vegetation-index channel, plus a
//! binary leaf mask and labeling. Datasets ship as a single bundle file:
//! a JSON index followed by the tensors in the binary tensor format.

mod augment;
mod calibrate;
mod ingest;
mod mask;
mod split;
mod synthetic;

pub use augment::{augment, reflect, Axis};
pub use calibrate::{calibrate, normalize_band, normalize_minmax, resize_to, CalibrationTriple,
                    REFLECTANCE_REFERENCES};
pub use ingest::{ingest_dataset, IngestReport};
pub use mask::{leaf_mask, MaskOutcome};
pub use split::{split, SplitMode, SplitResult, SplitSpec};
pub use synthetic::generate_synthetic;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_from, write_tensor_to, Tensor};
use crate::train::TrainItem;

/// Band indices within `SpectralImage::bands`.
pub const BAND_BLUE: usize = 0;
pub const BAND_GREEN: usize = 1;
pub const BAND_RED: usize = 2;
pub const BAND_NIR: usize = 3;
pub const BAND_VI: usize = 4;

pub const BAND_NAMES: [&str; 4] = ["b430", "g530", "r685", "nir740"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Diseased,
    Unknown,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Label::Healthy => "healthy",
            Label::Diseased => "diseased",
            Label::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Mild,
    Severe,
}

/// One calibrated multi-channel leaf image.
#[derive(Debug, Clone)]
pub struct SpectralImage {
    /// `[C,H,W]`, values in `[0,1]`, band order B,G,R,NIR[,VI].
    pub bands: Tensor,
    /// `[H,W]` leaf mask, strictly 0/1.
    pub mask: Tensor,
    pub label: Label,
    pub severity: Option<Severity>,
    /// Where the sample came from (directory name, generator tag, ...).
    pub provenance: String,
    /// Synthetic ground truth: `[H,W]` lesion mask, when known.
    pub lesion_mask: Option<Tensor>,
}

impl SpectralImage {
    pub fn channels(&self) -> usize {
        self.bands.shape()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.bands.shape()[1], self.bands.shape()[2])
    }

    pub fn band(&self, index: usize) -> &[f32] {
        let (h, w) = self.size();
        &self.bands.data()[index * h * w..(index + 1) * h * w]
    }

    /// Append the NIR/R ratio as a min-max-normalized extra channel.
    /// A constant ratio (NIR proportional to R everywhere) surfaces as a
    /// degenerate-band error from the normalization.
    pub fn add_vi_channel(&self) -> Result<SpectralImage> {
        if self.channels() != 4 {
            return Err(Error::parameter(format!(
                "vegetation index needs the 4 raw bands, got {} channels",
                self.channels()
            )));
        }
        let (h, w) = self.size();
        let red = self.band(BAND_RED);
        let nir = self.band(BAND_NIR);
        let raw: Vec<f32> = nir
            .iter()
            .zip(red)
            .map(|(&n, &r)| (n as f64 / (r as f64 + VI_EPSILON)) as f32)
            .collect();
        let vi = normalize_band(&raw)
            .map_err(|_| Error::degenerate("vegetation index NIR/R is constant over the image"))?;
        let mut data = self.bands.data().to_vec();
        data.extend_from_slice(&vi);
        Ok(SpectralImage {
            bands: Tensor::new(data, &[5, h, w])?,
            ..self.clone()
        })
    }

    /// Raw (pre-normalization) NIR/R ratio values inside the leaf mask.
    pub fn raw_vi_inside_mask(&self) -> Vec<f64> {
        let red = self.band(BAND_RED);
        let nir = self.band(BAND_NIR);
        self.mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.5)
            .map(|(i, _)| nir[i] as f64 / (red[i] as f64 + VI_EPSILON))
            .collect()
    }

    /// View as a training item (first 4 or 5 channels as configured).
    pub fn to_train_item(&self) -> TrainItem {
        TrainItem {
            bands: self.bands.clone(),
            mask: Some(self.mask.clone()),
        }
    }
}

/// Division guard for the NIR/R ratio.
pub const VI_EPSILON: f64 = 1e-6;

/// An ordered collection of samples sharing band layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<SpectralImage>,
    pub band_names: Vec<String>,
    /// Generator seed when the set is synthetic.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// Dataset with the vegetation-index channel appended to every
    /// sample (clustering runs use 5 channels).
    pub fn with_vi_channel(&self) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| s.add_vi_channel())
            .collect::<Result<Vec<_>>>()?;
        let mut band_names = self.band_names.clone();
        band_names.push("vi".to_string());
        Ok(Dataset {
            samples,
            band_names,
            seed: self.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleIndex {
    band_names: Vec<String>,
    seed: Option<u64>,
    samples: Vec<BundleSample>,
}

#[derive(Serialize, Deserialize)]
struct BundleSample {
    id: String,
    label: Label,
    severity: Option<Severity>,
    has_lesion_mask: bool,
}

/// Serialize the bundle's JSON index (the same text `save_bundle` puts
/// at the head of the file).
pub fn bundle_index_json(dataset: &Dataset) -> Result<String> {
    let index = BundleIndex {
        band_names: dataset.band_names.clone(),
        seed: dataset.seed,
        samples: dataset
            .samples
            .iter()
            .map(|s| BundleSample {
                id: s.provenance.clone(),
                label: s.label,
                severity: s.severity,
                has_lesion_mask: s.lesion_mask.is_some(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&index)?)
}

/// Write a dataset as one bundle file: JSON index, newline, then per
/// sample its bands, mask, and (if present) lesion mask as binary
/// tensors.
pub fn save_bundle(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bundle_index_json(dataset)?.as_bytes())?;
    w.write_all(b"\n")?;
    for s in &dataset.samples {
        write_tensor_to(&s.bands, &mut w)?;
        write_tensor_to(&s.mask, &mut w)?;
        if let Some(lm) = &s.lesion_mask {
            write_tensor_to(lm, &mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<Dataset> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut stream = serde_json::Deserializer::from_slice(&buf).into_iter::<BundleIndex>();
    let index = stream
        .next()
        .ok_or_else(|| Error::data("empty dataset bundle"))?
        .map_err(Error::Json)?;
    let mut rest = &buf[stream.byte_offset()..];
    if rest.first() == Some(&b'\n') {
        rest = &rest[1..];
    }

    let mut samples = Vec::with_capacity(index.samples.len());
    for meta in &index.samples {
        let bands = read_tensor_from(&mut rest)?;
        let mask = read_tensor_from(&mut rest)?;
        if bands.shape().len() != 3 {
            return Err(Error::data(format!(
                "sample '{}' bands must be rank 3, got {:?}",
                meta.id,
                bands.shape()
            )));
        }
        if mask.shape() != &bands.shape()[1..] {
            return Err(Error::data(format!(
                "sample '{}' mask shape {:?} does not match bands {:?}",
                meta.id,
                mask.shape(),
                bands.shape()
            )));
        }
        let lesion_mask = if meta.has_lesion_mask {
            Some(read_tensor_from(&mut rest)?)
        } else {
            None
        };
        samples.push(SpectralImage {
            bands,
            mask,
            label: meta.label,
            severity: meta.severity,
            provenance: meta.id.clone(),
            lesion_mask,
        });
    }
    Ok(Dataset {
        samples,
        band_names: index.band_names,
        seed: index.seed,
    })
}
