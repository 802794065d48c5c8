//! Training loop: Adam with bias correction, seeded epoch shuffling,
//! early stopping on validation loss with best-weight restore.

use std::io::Write;
use std::time::Instant;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::rng::Rng;
use crate::tensor::{Elem, Tensor};

/// Optimization hyperparameters and loop bounds.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Restrict the reconstruction loss to leaf-mask pixels.
    pub masked_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_epochs: 500,
            patience: 20,
            batch_size: 8,
            seed: 0,
            masked_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::parameter("learning_rate must be > 0".to_string()));
        }
        if self.patience < 1 {
            return Err(Error::parameter("patience must be >= 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::parameter("batch_size must be >= 1".to_string()));
        }
        if self.max_epochs < 1 {
            return Err(Error::parameter("max_epochs must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One training/validation sample: `[C,H,W]` bands plus an optional
/// `[H,W]` binary mask for masked-loss runs.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub bands: Tensor,
    pub mask: Option<Tensor>,
}

/// Loss history and stopping bookkeeping for one run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// 1-based epoch the loop stopped after.
    pub stopped_epoch: usize,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// The patience window ran out (as opposed to hitting max_epochs).
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// Training-log CSV: `epoch,train_loss,val_loss,seconds`. With
    /// `timing` off the seconds column is written as 0 so reruns of the
    /// same seed produce byte-identical logs.
    pub fn write_csv<W: Write>(&self, w: &mut W, timing: bool) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,seconds")?;
        for i in 0..self.train_loss.len() {
            let secs = if timing { self.epoch_seconds[i] } else { 0.0 };
            writeln!(w, "{},{},{},{}", i + 1, self.train_loss[i], self.val_loss[i], secs)?;
        }
        Ok(())
    }
}

/// Adam hyperparameters for a single step.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(cfg: &TrainConfig) -> Self {
        AdamParams {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
        }
    }
}

/// One Adam update with bias correction:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Elem>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: usize,
    cfg: &AdamParams,
) {
    assert!(t >= 1, "adam step index starts at 1");
    assert!(
        param.len() == grad.len() && param.len() == m.len() && param.len() == v.len(),
        "adam: mismatched lengths"
    );
    let b1 = T::from64(cfg.beta1);
    let b2 = T::from64(cfg.beta2);
    let one = T::one();
    let bc1 = T::from64(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::from64(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::from64(cfg.learning_rate);
    let eps = T::from64(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// First/second moment buffers per parameter plus the step counter.
pub struct AdamState {
    moments: IndexMap<String, (Vec<f32>, Vec<f32>)>,
    t: usize,
}

impl AdamState {
    pub fn new(model: &ModelState) -> Self {
        let moments = model
            .params()
            .iter()
            .map(|(k, t)| (k.clone(), (vec![0.0; t.numel()], vec![0.0; t.numel()])))
            .collect();
        AdamState { moments, t: 0 }
    }

    /// Apply one step to every parameter that received a gradient.
    pub fn step(
        &mut self,
        model: &mut ModelState,
        grads: &IndexMap<String, Vec<f32>>,
        cfg: &AdamParams,
    ) -> Result<()> {
        self.t += 1;
        let names: Vec<String> = model.param_names().cloned().collect();
        for name in names {
            let Some(grad) = grads.get(&name) else { continue };
            let (m, v) = self
                .moments
                .get_mut(&name)
                .ok_or_else(|| Error::data(format!("no moments for '{name}'")))?;
            let current = model.param(&name)?;
            let shape = current.shape().to_vec();
            let mut data = current.data().to_vec();
            adam_step(&mut data, grad, m, v, self.t, cfg);
            model.set_param(&name, Tensor::new(data, &shape)?)?;
        }
        Ok(())
    }
}

/// Shuffled minibatch index plan for one epoch; every sample appears in
/// exactly one batch, the last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn stack_batch(items: &[TrainItem], idx: &[usize], masked: bool) -> Result<(Tensor, Option<Tensor>)> {
    let first = &items[idx[0]].bands;
    let (c, h, w) = match first.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::shape(format!("sample bands must be [C,H,W], got {s:?}"))),
    };
    let mut data = Vec::with_capacity(idx.len() * c * h * w);
    for &i in idx {
        if items[i].bands.shape() != [c, h, w] {
            return Err(Error::shape(format!(
                "sample {i} has shape {:?}, expected [{c},{h},{w}]",
                items[i].bands.shape()
            )));
        }
        data.extend_from_slice(items[i].bands.data());
    }
    let x = Tensor::new(data, &[idx.len(), c, h, w])?;
    if !masked {
        return Ok((x, None));
    }
    let mut wdata = Vec::with_capacity(idx.len() * c * h * w);
    for &i in idx {
        let mask = items[i].mask.as_ref().ok_or_else(|| {
            Error::data(format!("masked loss requested but sample {i} has no mask"))
        })?;
        if mask.shape() != [h, w] {
            return Err(Error::shape(format!(
                "mask of sample {i} must be [{h},{w}], got {:?}",
                mask.shape()
            )));
        }
        for _ in 0..c {
            wdata.extend_from_slice(mask.data());
        }
    }
    Ok((x, Some(Tensor::new(wdata, &[idx.len(), c, h, w])?)))
}

fn batch_loss_value(model: &ModelState, items: &[TrainItem], idx: &[usize], masked: bool) -> Result<f64> {
    let (x, weights) = stack_batch(items, idx, masked)?;
    let xhat = model.forward(&x)?;
    let loss = match &weights {
        Some(w) => xhat.mse_loss_weighted(&x, w)?,
        None => xhat.mse_loss(&x)?,
    };
    Ok(loss.item() as f64)
}

fn mean_eval_loss(model: &ModelState, items: &[TrainItem], batch_size: usize, masked: bool) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..items.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let l = batch_loss_value(model, items, chunk, masked)?;
        total += l * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Optimize `model` on `train_set`, monitoring `val_set`.
///
/// Per epoch: seeded shuffle, minibatch Adam on the reconstruction loss,
/// then an eval-mode validation pass. Stops after `patience` epochs
/// without a new validation minimum or at `max_epochs`, and returns the
/// weights of the best epoch.
pub fn train(
    model: ModelState,
    train_set: &[TrainItem],
    val_set: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("train and validation sets must be nonempty"));
    }

    let started = Instant::now();
    let mut model = model;
    let mut rng = Rng::seed_from(cfg.seed);
    let mut adam = AdamState::new(&model);
    let adam_cfg = AdamParams::from(cfg);

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        epoch_seconds: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        stopped_early: false,
        wall_seconds: 0.0,
    };
    let mut best: Option<(f64, ModelState)> = None;
    let mut stall = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let epoch_started = Instant::now();
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (bi, batch) in epoch_batches(train_set.len(), cfg.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let (x, weights) = stack_batch(train_set, &batch, cfg.masked_loss)?;
            let tracked = model.tracked_params();
            let xhat = model.forward_train(&x, &tracked, &mut rng)?;
            let loss = match &weights {
                Some(w) => xhat.mse_loss_weighted(&x, w)?,
                None => xhat.mse_loss(&x)?,
            };
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi}"
                )));
            }
            loss.backward()?;
            let grads: IndexMap<String, Vec<f32>> = tracked
                .iter()
                .filter_map(|(k, leaf)| leaf.grad().map(|g| (k.clone(), g)))
                .collect();
            adam.step(&mut model, &grads, &adam_cfg)?;
            epoch_loss += value * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = mean_eval_loss(&model, val_set, cfg.batch_size, cfg.masked_loss)?;
        if !val_loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.epoch_seconds.push(epoch_started.elapsed().as_secs_f64());
        report.stopped_epoch = epoch;

        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, model.clone()));
            report.best_epoch = epoch;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    let (_, best_model) = best.expect("at least one epoch ran");
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((best_model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.5f64, -2.0];
        let g = vec![0.0, 0.0];
        let mut m = vec![0.0, 0.0];
        let mut v = vec![0.0, 0.0];
        let cfg = AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        adam_step(&mut p, &g, &mut m, &mut v, 1, &cfg);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        // theta=1, g=1, t=1, defaults: m_hat = v_hat = 1, so
        // theta' = 1 - 1e-3 / (1 + 1e-8)
        let mut p = vec![1.0f64];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        let cfg = AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        adam_step(&mut p, &[1.0], &mut m, &mut v, 1, &cfg);
        let want = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - want).abs() < 1e-9, "{} vs {want}", p[0]);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // f(theta) = (theta - 3)^2 from theta = 0
        let cfg = AdamParams {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = vec![0.0f64];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        let mut f_hist = Vec::new();
        for t in 1..=200 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut m, &mut v, t, &cfg);
            f_hist.push((p[0] - 3.0).powi(2));
        }
        assert!((p[0] - 3.0).abs() < 0.5, "theta = {}", p[0]);
        // monotone descent after burn-in, up to the convergence floor
        // where Adam's momentum jitters around the optimum
        let floor = f_hist.iter().position(|&f| f < 1e-6).expect("converges below 1e-6");
        assert!(floor > 40, "converged suspiciously fast at {floor}");
        for w in f_hist[20..=floor].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn epoch_batches_cover_every_sample_once() {
        let mut rng = Rng::seed_from(5);
        let batches = epoch_batches(23, 4, &mut rng);
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    fn synthetic_items(n: usize, channels: usize, size: usize, seed: u64) -> Vec<TrainItem> {
        // smooth ramp images with per-sample offsets: enough structure to
        // learn, cheap to build
        let mut rng = Rng::seed_from(seed);
        (0..n)
            .map(|_| {
                let off = rng.uniform_in(0.0, 0.4);
                let amp = rng.uniform_in(0.3, 0.6);
                let mut data = Vec::with_capacity(channels * size * size);
                for c in 0..channels {
                    for y in 0..size {
                        for x in 0..size {
                            let v = off
                                + amp * (x as f64 / size as f64)
                                + 0.1 * (c as f64 + 1.0) * (y as f64 / size as f64);
                            data.push(v as f32);
                        }
                    }
                }
                TrainItem {
                    bands: Tensor::new(data, &[channels, size, size]).unwrap(),
                    mask: None,
                }
            })
            .collect()
    }

    fn tiny_model(channels: usize, size: usize, seed: u64) -> ModelState {
        let spec = ModelSpec::clu_ae(channels, (size, size)).unwrap();
        let mut st = ModelState::new(spec).unwrap();
        st.he_init(&mut Rng::seed_from(seed));
        st
    }

    #[test]
    fn immediate_stall_stops_after_patience() {
        // learning_rate ~ 0 keeps the validation loss constant, so the
        // second epoch is already "no improvement" with patience 1.
        let items = synthetic_items(8, 3, 16, 1);
        let cfg = TrainConfig {
            learning_rate: 1e-12,
            max_epochs: 50,
            patience: 1,
            batch_size: 4,
            seed: 2,
            ..TrainConfig::default()
        };
        let model = tiny_model(3, 16, 3);
        let (_, report) = train(model, &items[..6], &items[6..], &cfg).unwrap();
        assert_eq!(report.stopped_epoch, 2);
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn smoke_train_reduces_loss() {
        let items = synthetic_items(16, 3, 32, 4);
        let cfg = TrainConfig {
            max_epochs: 10,
            patience: 20,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let model = tiny_model(3, 32, 6);
        let (_, report) = train(model, &items[..12], &items[12..], &cfg).unwrap();
        assert!(
            report.train_loss.last().unwrap() < report.train_loss.first().unwrap(),
            "{:?}",
            report.train_loss
        );
    }

    #[test]
    fn same_seed_reproduces_loss_sequences() {
        let items = synthetic_items(8, 3, 16, 7);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 4,
            seed: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let model = tiny_model(3, 16, 9);
            let (_, r) = train(model, &items[..6], &items[6..], &cfg).unwrap();
            (r.train_loss, r.val_loss)
        };
        let (t1, v1) = run();
        let (t2, v2) = run();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn early_stopping_bookkeeping_invariants() {
        let items = synthetic_items(12, 3, 16, 10);
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 3,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let model = tiny_model(3, 16, 12);
        let (best_model, report) = train(model, &items[..9], &items[9..], &cfg).unwrap();
        assert!(report.stopped_epoch - report.best_epoch <= cfg.patience);
        let best_val = report.val_loss[report.best_epoch - 1];
        assert!(report.val_loss.iter().all(|&v| v >= best_val));
        // returned model reproduces the best validation loss
        let revalidated = mean_eval_loss(&best_model, &items[9..], 4, false).unwrap();
        assert!((revalidated - best_val).abs() < 1e-12);
    }

    #[test]
    fn report_csv_has_expected_columns() {
        let report = TrainReport {
            train_loss: vec![0.5, 0.4],
            val_loss: vec![0.6, 0.45],
            epoch_seconds: vec![1.25, 1.5],
            stopped_epoch: 2,
            best_epoch: 2,
            stopped_early: false,
            wall_seconds: 2.75,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "epoch,train_loss,val_loss,seconds\n1,0.5,0.6,0\n2,0.4,0.45,0\n"
        );
        let mut buf = Vec::new();
        report.write_csv(&mut buf, true).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("1,0.5,0.6,1.25"));
    }
}
