//! Model checkpoints: a JSON manifest (spec, seed, tensor catalog)
//! followed by the tensors in the binary tensor-file format, in catalog
//! order. Parameters come first, then each norm layer's running mean and
//! running variance. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor_from, write_tensor_to, Tensor};

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: ModelSpec,
    rng_seed: u64,
    params: Vec<TensorMeta>,
    norms: Vec<NormMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NormMeta {
    name: String,
    channels: usize,
    momentum: f64,
    eps: f64,
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let manifest = Manifest {
        spec: state.spec.clone(),
        rng_seed: state.rng_seed,
        params: state
            .params()
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        norms: state
            .norms()
            .iter()
            .map(|(name, st)| NormMeta {
                name: name.clone(),
                channels: st.channels(),
                momentum: st.momentum,
                eps: st.eps,
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    for t in state.params().values() {
        write_tensor_to(t, &mut w)?;
    }
    for st in state.norms().values() {
        let mean = Tensor::new(st.running_mean.clone(), &[st.channels()])?;
        let var = Tensor::new(st.running_var.clone(), &[st.channels()])?;
        write_tensor_to(&mean, &mut w)?;
        write_tensor_to(&var, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;

    let mut stream = serde_json::Deserializer::from_slice(&buf).into_iter::<Manifest>();
    let manifest = stream
        .next()
        .ok_or_else(|| Error::data("empty checkpoint file"))?
        .map_err(Error::Json)?;
    let mut rest = &buf[stream.byte_offset()..];
    // optional newline between manifest and payload
    if rest.first() == Some(&b'\n') {
        rest = &rest[1..];
    }

    let mut state = ModelState::new(manifest.spec)?;
    state.rng_seed = manifest.rng_seed;

    if manifest.params.len() != state.params().len() {
        return Err(Error::data(format!(
            "checkpoint lists {} parameters, spec derives {}",
            manifest.params.len(),
            state.params().len()
        )));
    }
    for meta in &manifest.params {
        let t = read_tensor_from(&mut rest)?;
        if t.shape() != meta.shape.as_slice() {
            return Err(Error::data(format!(
                "tensor '{}' has shape {:?}, manifest says {:?}",
                meta.name,
                t.shape(),
                meta.shape
            )));
        }
        state.set_param(&meta.name, t)?;
    }
    for meta in &manifest.norms {
        let mean = read_tensor_from(&mut rest)?;
        let var = read_tensor_from(&mut rest)?;
        let st = state
            .norms_mut()
            .get_mut(&meta.name)
            .ok_or_else(|| Error::data(format!("unknown norm layer '{}'", meta.name)))?;
        if mean.numel() != st.channels() || var.numel() != st.channels() {
            return Err(Error::data(format!(
                "norm '{}' statistics have wrong length",
                meta.name
            )));
        }
        st.running_mean = mean.data().to_vec();
        st.running_var = var.data().to_vec();
        st.momentum = meta.momentum;
        st.eps = meta.eps;
    }
    Ok(state)
}
