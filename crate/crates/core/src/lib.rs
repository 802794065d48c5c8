//! Unsupervised detection of powdery mildew on multispectral leaf images.
//!
//! The crate provides, bottom up:
//!
//! - [`tensor`]: an n-dimensional `f32` tensor type with reverse-mode
//!   differentiation and the conv/pool/norm ops the autoencoders need;
//! - [`nn`]: the autoencoder architectures (the plain clustering model
//!   and five residual anomaly variants) with He initialization and
//!   checkpointing;
//! - [`train`]: Adam, seeded epoch shuffling, early stopping;
//! - [`data`]: reflectance calibration, NIR leaf masks, min-max
//!   normalization, the NIR/R vegetation-index channel, dataset splits,
//!   augmentation, and a synthetic multispectral leaf generator;
//! - [`cluster`]: k-means over bottleneck features with silhouette and
//!   Davies-Bouldin validation plus single-feature ranking;
//! - [`anomaly`]: image- and feature-space reconstruction scores,
//!   ROC/AUC evaluation, and multi-model comparison.

pub mod anomaly;
pub mod cluster;
pub mod data;
pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use anomaly::{ModelComparison, RocCurve, ScoredSample};
pub use cluster::{ClusteringResult, FeatureSelection, FeatureSet, FeatureVector};
pub use data::{CalibrationTriple, Dataset, Label, Severity, SpectralImage, SplitMode, SplitSpec};
pub use error::{Error, Result};
pub use nn::{AnoVariant, Family, ModelSpec, ModelState};
pub use rng::Rng;
pub use tensor::{BnState, Elem, Mode, Tensor};
pub use train::{TrainConfig, TrainItem, TrainReport};
