//! Dataset splits.
//!
//! - clustering mode: labels stay mixed; 5% of the set is held out for
//!   testing and 5% of the remainder for validation;
//! - anomaly mode: the model must see only healthy leaves, so 20% of the
//!   healthy samples go to test and 10% of the remaining healthy to
//!   validation; every diseased sample lands in the evaluation pool.
//!
//! Counts round down with a minimum of one per populated split;
//! membership is decided by a seeded shuffle.

use serde::{Deserialize, Serialize};

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Clustering,
    Anomaly,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

/// Index sets into the dataset; disjoint, exhaustive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Diseased samples (anomaly mode only; empty otherwise).
    pub anomalous: Vec<usize>,
}

impl SplitResult {
    pub fn subset_of(&self, index: usize) -> &'static str {
        if self.train.contains(&index) {
            "train"
        } else if self.val.contains(&index) {
            "val"
        } else if self.test.contains(&index) {
            "test"
        } else {
            "anomalous"
        }
    }
}

fn floor_at_least_one(frac: f64, n: usize) -> usize {
    (((n as f64) * frac).floor() as usize).max(1)
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitResult> {
    if dataset.is_empty() {
        return Err(Error::data("cannot split an empty dataset"));
    }
    let mut rng = Rng::seed_from(spec.seed);
    let mut result = match spec.mode {
        SplitMode::Clustering => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            rng.shuffle(&mut order);
            let n_test = floor_at_least_one(0.05, order.len());
            if order.len() <= n_test + 1 {
                return Err(Error::data(format!(
                    "{} samples are too few for a clustering split",
                    order.len()
                )));
            }
            let test: Vec<usize> = order.drain(..n_test).collect();
            let n_val = floor_at_least_one(0.05, order.len());
            if order.len() <= n_val {
                return Err(Error::data("too few samples left for training".to_string()));
            }
            let val: Vec<usize> = order.drain(..n_val).collect();
            SplitResult {
                train: order,
                val,
                test,
                anomalous: Vec::new(),
            }
        }
        SplitMode::Anomaly => {
            let mut healthy: Vec<usize> = (0..dataset.len())
                .filter(|&i| dataset.samples[i].label == Label::Healthy)
                .collect();
            let anomalous: Vec<usize> = (0..dataset.len())
                .filter(|&i| dataset.samples[i].label != Label::Healthy)
                .collect();
            if healthy.len() < 3 {
                return Err(Error::data(format!(
                    "{} healthy samples are too few for an anomaly split",
                    healthy.len()
                )));
            }
            rng.shuffle(&mut healthy);
            let n_test = floor_at_least_one(0.2, healthy.len());
            let test: Vec<usize> = healthy.drain(..n_test).collect();
            let n_val = floor_at_least_one(0.1, healthy.len());
            if healthy.len() <= n_val {
                return Err(Error::data("too few healthy samples left for training".to_string()));
            }
            let val: Vec<usize> = healthy.drain(..n_val).collect();
            SplitResult {
                train: healthy,
                val,
                test,
                anomalous,
            }
        }
    };
    result.train.sort_unstable();
    result.val.sort_unstable();
    result.test.sort_unstable();
    result.anomalous.sort_unstable();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SpectralImage, BAND_NAMES};
    use crate::tensor::Tensor;

    fn dataset(n_healthy: usize, n_diseased: usize) -> Dataset {
        let sample = |label, i: usize| SpectralImage {
            bands: Tensor::full(&[4, 2, 2], 0.5),
            mask: Tensor::full(&[2, 2], 1.0),
            label,
            severity: None,
            provenance: format!("{label}{i}"),
            lesion_mask: None,
        };
        let mut samples: Vec<SpectralImage> =
            (0..n_healthy).map(|i| sample(Label::Healthy, i)).collect();
        samples.extend((0..n_diseased).map(|i| sample(Label::Diseased, i)));
        Dataset {
            samples,
            band_names: BAND_NAMES.iter().map(|s| s.to_string()).collect(),
            seed: None,
        }
    }

    #[test]
    fn anomaly_split_of_100_healthy_is_20_8_72() {
        let ds = dataset(100, 13);
        let r = split(&ds, &SplitSpec { mode: SplitMode::Anomaly, seed: 1 }).unwrap();
        assert_eq!(r.test.len(), 20);
        assert_eq!(r.val.len(), 8);
        assert_eq!(r.train.len(), 72);
        assert_eq!(r.anomalous.len(), 13);
        for &i in r.train.iter().chain(&r.val).chain(&r.test) {
            assert_eq!(ds.samples[i].label, Label::Healthy);
        }
    }

    #[test]
    fn clustering_split_of_211_is_10_10_191() {
        let ds = dataset(97, 114);
        let r = split(&ds, &SplitSpec { mode: SplitMode::Clustering, seed: 2 }).unwrap();
        assert_eq!(r.test.len(), 10);
        assert_eq!(r.val.len(), 10);
        assert_eq!(r.train.len(), 191);
        assert!(r.anomalous.is_empty());
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        for (nh, nd, mode) in [
            (50, 20, SplitMode::Clustering),
            (50, 20, SplitMode::Anomaly),
            (7, 0, SplitMode::Clustering),
            (5, 3, SplitMode::Anomaly),
        ] {
            let ds = dataset(nh, nd);
            let r = split(&ds, &SplitSpec { mode, seed: 3 }).unwrap();
            let mut all: Vec<usize> = r
                .train
                .iter()
                .chain(&r.val)
                .chain(&r.test)
                .chain(&r.anomalous)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..nh + nd).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_same_membership() {
        let ds = dataset(40, 10);
        let spec = SplitSpec { mode: SplitMode::Anomaly, seed: 9 };
        assert_eq!(split(&ds, &spec).unwrap(), split(&ds, &spec).unwrap());
        let other = split(&ds, &SplitSpec { mode: SplitMode::Anomaly, seed: 10 }).unwrap();
        assert_ne!(split(&ds, &spec).unwrap().train, other.train);
    }

    #[test]
    fn too_few_samples_error() {
        let ds = dataset(2, 0);
        assert!(split(&ds, &SplitSpec { mode: SplitMode::Clustering, seed: 1 }).is_err());
        assert!(split(&ds, &SplitSpec { mode: SplitMode::Anomaly, seed: 1 }).is_err());
    }
}
