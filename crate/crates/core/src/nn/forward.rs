//! Encoder/decoder execution for both model families.
//!
//! Eval-mode entry points take `&self`, use running norm statistics, and
//! skip dropout, so a model snapshot can score from many threads.
//! Train-mode entry points thread a map of gradient-tracked parameter
//! leaves through the graph; the caller reads gradients off that map
//! after `backward`.

use indexmap::IndexMap;

use super::{Family, ModelState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BnState, Mode, Tensor};

/// Parameter leaves for one training step, keyed like `ModelState`.
pub type TrackedParams = IndexMap<String, Tensor>;

enum Norms<'a> {
    Frozen(&'a IndexMap<String, BnState>),
    Updating(&'a mut IndexMap<String, BnState>),
}

struct Runner<'a> {
    family: Family,
    dropout_rate: f64,
    params: &'a IndexMap<String, Tensor>,
    norms: Norms<'a>,
    rng: Option<&'a mut Rng>,
}

impl Runner<'_> {
    fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::data(format!("missing parameter '{name}'")))
    }

    fn conv(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        x.conv2d(self.param(&format!("{name}.w"))?, self.param(&format!("{name}.b"))?)
    }

    fn bn(&mut self, name: &str, x: &Tensor) -> Result<Tensor> {
        let gamma = self.params.get(&format!("{name}.gamma"));
        let beta = self.params.get(&format!("{name}.beta"));
        let (gamma, beta) = match (gamma, beta) {
            (Some(g), Some(b)) => (g.clone(), b.clone()),
            _ => return Err(Error::data(format!("missing batchnorm parameters for '{name}'"))),
        };
        match &mut self.norms {
            Norms::Frozen(map) => {
                let st = map
                    .get(name)
                    .ok_or_else(|| Error::data(format!("missing norm state '{name}'")))?;
                x.batchnorm2d_eval(&gamma, &beta, st)
            }
            Norms::Updating(map) => {
                let st = map
                    .get_mut(name)
                    .ok_or_else(|| Error::data(format!("missing norm state '{name}'")))?;
                x.batchnorm2d(&gamma, &beta, st, Mode::Train)
            }
        }
    }

    fn block(&mut self, name: &str, x: &Tensor) -> Result<Tensor> {
        match self.family {
            Family::Plain => {
                let y = self.conv(&format!("{name}.conv"), x)?;
                Ok(self.bn(&format!("{name}.bn"), &y)?.relu())
            }
            Family::Residual => {
                let y = self.conv(&format!("{name}.conv1"), x)?;
                let y = self.bn(&format!("{name}.bn1"), &y)?.relu();
                let y = self.conv(&format!("{name}.conv2"), &y)?;
                let y = self.bn(&format!("{name}.bn2"), &y)?;
                let skip = if self.params.contains_key(&format!("{name}.skip.w")) {
                    self.conv(&format!("{name}.skip"), x)?
                } else {
                    x.clone()
                };
                Ok(y.add(&skip)?.relu())
            }
        }
    }

    fn encode(&mut self, x: &Tensor, n_blocks: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for i in 1..=n_blocks {
            if i > 1 {
                h = h.maxpool2d()?;
            }
            h = self.block(&format!("enc{i}"), &h)?;
        }
        match self.rng.as_deref_mut() {
            Some(rng) => h.dropout(self.dropout_rate, Mode::Train, rng),
            None => Ok(h),
        }
    }

    fn decode(&mut self, z: &Tensor, n_blocks: usize) -> Result<Tensor> {
        let mut h = z.clone();
        for i in 1..=n_blocks {
            h = h.upsample2d()?;
            h = self.block(&format!("dec{i}"), &h)?;
        }
        Ok(self.conv("head", &h)?.sigmoid())
    }
}

impl ModelState {
    /// Fresh gradient-tracked leaves for one forward/backward pass.
    pub fn tracked_params(&self) -> TrackedParams {
        self.params()
            .iter()
            .map(|(k, v)| (k.clone(), v.tracked_leaf()))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [
            self.spec.input_channels,
            self.spec.input_size.0,
            self.spec.input_size.1,
        ];
        match x.shape() {
            [_, c, h, w] if [*c, *h, *w] == want => Ok(()),
            s => Err(Error::shape(format!(
                "model expects [N,{},{},{}], got {s:?}",
                want[0], want[1], want[2]
            ))),
        }
    }

    fn check_bottleneck(&self, z: &Tensor) -> Result<()> {
        let (c, h, w) = self.spec.bottleneck_shape();
        match z.shape() {
            [_, zc, zh, zw] if [*zc, *zh, *zw] == [c, h, w] => Ok(()),
            s => Err(Error::shape(format!(
                "decoder expects bottleneck [N,{c},{h},{w}], got {s:?}"
            ))),
        }
    }

    /// Eval-mode encoder: deterministic, running statistics, no dropout.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut r = Runner {
            family: self.spec.family,
            dropout_rate: self.spec.dropout_rate,
            params: self.params(),
            norms: Norms::Frozen(self.norms()),
            rng: None,
        };
        r.encode(x, self.spec.encoder_filters.len())
    }

    /// Eval-mode decoder.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_bottleneck(z)?;
        let mut r = Runner {
            family: self.spec.family,
            dropout_rate: self.spec.dropout_rate,
            params: self.params(),
            norms: Norms::Frozen(self.norms()),
            rng: None,
        };
        r.decode(z, self.spec.decoder_filters.len())
    }

    /// Eval-mode reconstruction; exactly `decode(encode(x))`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode(x)?;
        self.decode(&z)
    }

    /// Train-mode encoder: batch statistics (updating the running ones),
    /// dropout at the bottleneck, gradients flowing into `params`.
    pub fn encode_train(
        &mut self,
        x: &Tensor,
        params: &TrackedParams,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let n_blocks = self.spec.encoder_filters.len();
        let mut r = Runner {
            family: self.spec.family,
            dropout_rate: self.spec.dropout_rate,
            params,
            norms: Norms::Updating(self.norms_mut()),
            rng: Some(rng),
        };
        r.encode(x, n_blocks)
    }

    /// Train-mode decoder.
    pub fn decode_train(&mut self, z: &Tensor, params: &TrackedParams) -> Result<Tensor> {
        self.check_bottleneck(z)?;
        let n_blocks = self.spec.decoder_filters.len();
        let mut r = Runner {
            family: self.spec.family,
            dropout_rate: self.spec.dropout_rate,
            params,
            norms: Norms::Updating(self.norms_mut()),
            rng: None,
        };
        r.decode(z, n_blocks)
    }

    /// Train-mode reconstruction; exactly `decode_train(encode_train(x))`.
    pub fn forward_train(
        &mut self,
        x: &Tensor,
        params: &TrackedParams,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        let z = self.encode_train(x, params, rng)?;
        self.decode_train(&z, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AnoVariant, ModelSpec};

    fn random_input(spec: &ModelSpec, n: usize, rng: &mut Rng) -> Tensor {
        let shape = [n, spec.input_channels, spec.input_size.0, spec.input_size.1];
        let data: Vec<f32> = (0..shape.iter().product())
            .map(|_| rng.uniform() as f32)
            .collect();
        Tensor::new(data, &shape).unwrap()
    }

    fn built(spec: ModelSpec, seed: u64) -> ModelState {
        let mut state = ModelState::new(spec).unwrap();
        state.he_init(&mut Rng::seed_from(seed));
        state
    }

    #[test]
    fn encode_produces_bottleneck_shape() {
        let state = built(ModelSpec::clu_ae(5, (64, 64)).unwrap(), 1);
        let mut rng = Rng::seed_from(2);
        let x = random_input(&state.spec, 2, &mut rng);
        let z = state.encode(&x).unwrap();
        assert_eq!(z.shape(), &[2, 64, 8, 8]);
    }

    #[test]
    fn forward_preserves_shape_and_sigmoid_range() {
        let state = built(ModelSpec::clu_ae(5, (32, 32)).unwrap(), 3);
        let mut rng = Rng::seed_from(4);
        let x = random_input(&state.spec, 1, &mut rng);
        let y = state.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let state = built(ModelSpec::ano_ae(AnoVariant::M3, 4, (32, 32)).unwrap(), 5);
        let mut rng = Rng::seed_from(6);
        let x = random_input(&state.spec, 1, &mut rng);
        let a = state.forward(&x).unwrap();
        let b = state.forward(&x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn forward_equals_decode_of_encode() {
        let state = built(ModelSpec::ano_ae(AnoVariant::S3, 4, (32, 32)).unwrap(), 7);
        let mut rng = Rng::seed_from(8);
        let x = random_input(&state.spec, 2, &mut rng);
        let via_forward = state.forward(&x).unwrap();
        let via_parts = state.decode(&state.encode(&x).unwrap()).unwrap();
        assert_eq!(via_forward.data(), via_parts.data());
    }

    #[test]
    fn train_forward_backward_gives_finite_grads_everywhere() {
        let mut state = built(ModelSpec::ano_ae(AnoVariant::M3, 4, (16, 16)).unwrap(), 9);
        let mut rng = Rng::seed_from(10);
        let x = random_input(&state.spec, 2, &mut rng);
        let tracked = state.tracked_params();
        let y = state.forward_train(&x, &tracked, &mut rng).unwrap();
        let loss = y.mse_loss(&x).unwrap();
        loss.backward().unwrap();
        for (name, leaf) in &tracked {
            let g = leaf.grad().unwrap_or_else(|| panic!("no grad for {name}"));
            assert!(g.iter().all(|v| v.is_finite()), "non-finite grad in {name}");
        }
    }

    #[test]
    fn zeroed_residual_branch_passes_relu_of_input() {
        // M3 with 4 input channels: enc1 maps 4 -> 4, so its skip is the
        // identity. Zeroing the branch parameters must reduce the block
        // to relu(x).
        let mut state = built(ModelSpec::ano_ae(AnoVariant::M3, 4, (16, 16)).unwrap(), 11);
        for p in ["enc1.conv1", "enc1.conv2"] {
            let w = state.param(&format!("{p}.w")).unwrap().shape().to_vec();
            state.set_param(&format!("{p}.w"), Tensor::zeros(&w)).unwrap();
            let b = state.param(&format!("{p}.b")).unwrap().shape().to_vec();
            state.set_param(&format!("{p}.b"), Tensor::zeros(&b)).unwrap();
        }
        for p in ["enc1.bn1", "enc1.bn2"] {
            let g = state.param(&format!("{p}.gamma")).unwrap().shape().to_vec();
            state.set_param(&format!("{p}.gamma"), Tensor::zeros(&g)).unwrap();
        }
        assert!(!state.params().contains_key("enc1.skip.w"));

        let mut rng = Rng::seed_from(12);
        let data: Vec<f32> = (0..4 * 16 * 16).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
        let x = Tensor::new(data, &[1, 4, 16, 16]).unwrap();
        let mut r = Runner {
            family: Family::Residual,
            dropout_rate: 0.0,
            params: state.params(),
            norms: Norms::Frozen(state.norms()),
            rng: None,
        };
        let y = r.block("enc1", &x).unwrap();
        assert_eq!(y.data(), x.relu().data());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let state = built(ModelSpec::clu_ae(5, (32, 32)).unwrap(), 13);
        let bad = Tensor::zeros(&[1, 3, 32, 32]);
        assert!(matches!(state.encode(&bad), Err(Error::Shape(_))));
        let bad_z = Tensor::zeros(&[1, 64, 5, 5]);
        assert!(matches!(state.decode(&bad_z), Err(Error::Shape(_))));
    }
}
