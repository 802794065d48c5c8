//! Shared loading helpers.

use std::path::Path;

use mwae_core::data::{ingest_dataset, load_bundle};
use mwae_core::{Dataset, Error, ModelState, Result};

/// Load a dataset from a bundle file or, for a directory, ingest the raw
/// per-band PNG layout at the given target size.
pub fn load_dataset(path: &Path, ingest_size: usize) -> Result<Dataset> {
    if path.is_dir() {
        let report = ingest_dataset(path, ingest_size)?;
        for warning in &report.warnings {
            eprintln!("warning: {warning}");
        }
        Ok(report.dataset)
    } else {
        load_bundle(path)
    }
}

/// Reconcile dataset channels with what the model expects: a model with
/// one extra channel gets the NIR/R vegetation index appended.
pub fn adapt_channels(model: &ModelState, dataset: Dataset) -> Result<Dataset> {
    let have = dataset
        .samples
        .first()
        .map(|s| s.channels())
        .ok_or_else(|| Error::data("dataset is empty"))?;
    let want = model.spec.input_channels;
    if want == have {
        Ok(dataset)
    } else if want == have + 1 {
        dataset.with_vi_channel()
    } else {
        Err(Error::data(format!(
            "model expects {want} channels but the dataset has {have}"
        )))
    }
}

/// Size check between a model and (possibly adapted) dataset.
pub fn check_size(model: &ModelState, dataset: &Dataset) -> Result<()> {
    let size = dataset.samples[0].size();
    if size != model.spec.input_size {
        return Err(Error::data(format!(
            "model expects {}x{} inputs but the dataset is {}x{}",
            model.spec.input_size.0, model.spec.input_size.1, size.0, size.1
        )));
    }
    Ok(())
}
