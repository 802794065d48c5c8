//! Autoencoder architectures.
//!
//! Two families share one topology -- a four-block encoder with 2x max
//! pooling between blocks, dropout at the bottleneck, and a three-block
//! decoder with 2x upsampling before each block, closed by a 1x1
//! convolution and a sigmoid:
//!
//! - the plain clustering model (`Clu-AE`): each block is
//!   conv -> batchnorm -> relu, filters 8,16,32,64;
//! - the residual anomaly variants `S3,S5,M3,M5,B3`: each block is
//!   conv -> bn -> relu -> conv -> bn plus a skip path (identity when the
//!   channel counts match, else a 1x1 conv), summed and relu'd.
//!
//! The decoder filter list is always the reversed encoder list without
//! its deepest entry, so spatial resolution returns to the input size.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::TrackedParams;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BnState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Plain,
    Residual,
}

/// The five anomaly-detection architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnoVariant {
    S3,
    S5,
    M3,
    M5,
    B3,
}

impl AnoVariant {
    pub const ALL: [AnoVariant; 5] = [
        AnoVariant::S3,
        AnoVariant::S5,
        AnoVariant::M3,
        AnoVariant::M5,
        AnoVariant::B3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AnoVariant::S3 => "S3",
            AnoVariant::S5 => "S5",
            AnoVariant::M3 => "M3",
            AnoVariant::M5 => "M5",
            AnoVariant::B3 => "B3",
        }
    }

    fn encoder_filters(&self) -> Vec<usize> {
        match self {
            AnoVariant::S3 | AnoVariant::S5 => vec![2, 4, 8, 16],
            AnoVariant::M3 | AnoVariant::M5 => vec![4, 6, 8, 10],
            AnoVariant::B3 => vec![32, 64, 128, 256],
        }
    }

    fn kernel_size(&self) -> usize {
        match self {
            AnoVariant::S5 | AnoVariant::M5 => 5,
            _ => 3,
        }
    }
}

impl std::str::FromStr for AnoVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S3" => Ok(AnoVariant::S3),
            "S5" => Ok(AnoVariant::S5),
            "M3" => Ok(AnoVariant::M3),
            "M5" => Ok(AnoVariant::M5),
            "B3" => Ok(AnoVariant::B3),
            other => Err(Error::parameter(format!("unknown model variant '{other}'"))),
        }
    }
}

/// Architecture description; every parameter shape derives from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    pub kernel_size: usize,
    pub input_channels: usize,
    pub input_size: (usize, usize),
    pub dropout_rate: f64,
}

pub const DEFAULT_DROPOUT: f64 = 0.2;

impl ModelSpec {
    /// The clustering autoencoder: plain blocks, 8/16/32/64 filters, 3x3
    /// kernels. Requires a square input divisible by 8.
    pub fn clu_ae(channels: usize, size: (usize, usize)) -> Result<Self> {
        if size.0 != size.1 {
            return Err(Error::parameter(format!(
                "clu-ae expects a square input, got {}x{}",
                size.0, size.1
            )));
        }
        let spec = ModelSpec {
            family: Family::Plain,
            encoder_filters: vec![8, 16, 32, 64],
            decoder_filters: vec![32, 16, 8],
            kernel_size: 3,
            input_channels: channels,
            input_size: size,
            dropout_rate: DEFAULT_DROPOUT,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// One of the residual anomaly-detection variants.
    pub fn ano_ae(variant: AnoVariant, channels: usize, size: (usize, usize)) -> Result<Self> {
        let enc = variant.encoder_filters();
        let dec: Vec<usize> = enc[..enc.len() - 1].iter().rev().copied().collect();
        let spec = ModelSpec {
            family: Family::Residual,
            encoder_filters: enc,
            decoder_filters: dec,
            kernel_size: variant.kernel_size(),
            input_channels: channels,
            input_size: size,
            dropout_rate: DEFAULT_DROPOUT,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shrink (or grow) every filter count by `factor`, minimum one
    /// filter per block. Used to fit the big variants into a CPU budget;
    /// the scaled model keeps its family, kernels, and depth.
    pub fn scale_width(mut self, factor: f64) -> Result<Self> {
        if factor <= 0.0 {
            return Err(Error::parameter(format!("width scale must be > 0, got {factor}")));
        }
        let scale = |f: &usize| ((*f as f64 * factor).round() as usize).max(1);
        self.encoder_filters = self.encoder_filters.iter().map(scale).collect();
        self.decoder_filters = self
            .encoder_filters[..self.encoder_filters.len() - 1]
            .iter()
            .rev()
            .copied()
            .collect();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_filters.len() != 4 || self.decoder_filters.len() != 3 {
            return Err(Error::parameter(format!(
                "expected 4 encoder / 3 decoder blocks, got {}/{}",
                self.encoder_filters.len(),
                self.decoder_filters.len()
            )));
        }
        let mirror: Vec<usize> = self.encoder_filters[..3].iter().rev().copied().collect();
        if self.decoder_filters != mirror {
            return Err(Error::parameter(format!(
                "decoder filters {:?} must mirror encoder {:?} without its deepest entry",
                self.decoder_filters, self.encoder_filters
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::parameter("kernel size must be odd".to_string()));
        }
        let div = 1usize << (self.encoder_filters.len() - 1);
        if self.input_size.0 % div != 0 || self.input_size.1 % div != 0 {
            return Err(Error::parameter(format!(
                "input size {}x{} must be divisible by {div}",
                self.input_size.0, self.input_size.1
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::parameter("input_channels must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::parameter(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Shape of the encoder output: `(C, H/8, W/8)`.
    pub fn bottleneck_shape(&self) -> (usize, usize, usize) {
        let div = 1usize << (self.encoder_filters.len() - 1);
        (
            *self.encoder_filters.last().unwrap(),
            self.input_size.0 / div,
            self.input_size.1 / div,
        )
    }

    /// Bottleneck elements over input elements.
    pub fn compression_ratio(&self) -> f64 {
        let (c, h, w) = self.bottleneck_shape();
        let bottleneck = c * h * w;
        let input = self.input_channels * self.input_size.0 * self.input_size.1;
        bottleneck as f64 / input as f64
    }

    /// Channel flow through the encoder and decoder: block index paired
    /// with `(in, out)` channel counts, head excluded.
    fn encoder_io(&self) -> Vec<(usize, usize)> {
        let mut io = Vec::new();
        let mut prev = self.input_channels;
        for &f in &self.encoder_filters {
            io.push((prev, f));
            prev = f;
        }
        io
    }

    fn decoder_io(&self) -> Vec<(usize, usize)> {
        let mut io = Vec::new();
        let mut prev = *self.encoder_filters.last().unwrap();
        for &f in &self.decoder_filters {
            io.push((prev, f));
            prev = f;
        }
        io
    }
}

/// Learned parameters plus batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub spec: ModelSpec,
    params: IndexMap<String, Tensor>,
    norms: IndexMap<String, BnState>,
    pub rng_seed: u64,
}

impl ModelState {
    /// Build the parameter map from the spec: kernels and biases zeroed,
    /// gammas one, betas zero, fresh running statistics.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut state = ModelState {
            spec,
            params: IndexMap::new(),
            norms: IndexMap::new(),
            rng_seed: 0,
        };
        let k = state.spec.kernel_size;
        let enc_io = state.spec.encoder_io();
        let dec_io = state.spec.decoder_io();
        for (i, (cin, cout)) in enc_io.iter().enumerate() {
            state.add_block(&format!("enc{}", i + 1), *cin, *cout, k);
        }
        for (i, (cin, cout)) in dec_io.iter().enumerate() {
            state.add_block(&format!("dec{}", i + 1), *cin, *cout, k);
        }
        let cout = state.spec.input_channels;
        let cin = *state.spec.decoder_filters.last().unwrap();
        state.add_conv("head", cin, cout, 1);
        Ok(state)
    }

    fn add_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.params.insert(
            format!("{name}.w"),
            Tensor::zeros(&[cout, cin, k, k]),
        );
        self.params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    fn add_bn(&mut self, name: &str, c: usize) {
        self.params.insert(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
        self.params.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.norms.insert(name.to_string(), BnState::new(c));
    }

    fn add_block(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        match self.spec.family {
            Family::Plain => {
                self.add_conv(&format!("{name}.conv"), cin, cout, k);
                self.add_bn(&format!("{name}.bn"), cout);
            }
            Family::Residual => {
                self.add_conv(&format!("{name}.conv1"), cin, cout, k);
                self.add_bn(&format!("{name}.bn1"), cout);
                self.add_conv(&format!("{name}.conv2"), cout, cout, k);
                self.add_bn(&format!("{name}.bn2"), cout);
                if cin != cout {
                    self.add_conv(&format!("{name}.skip"), cin, cout, 1);
                }
            }
        }
    }

    /// He initialization: kernels from N(0, 2/fan_in), biases and betas
    /// zero, gammas one, running statistics reset.
    pub fn he_init(&mut self, rng: &mut Rng) {
        self.rng_seed = rng.seed();
        for (name, t) in self.params.iter_mut() {
            if name.ends_with(".w") {
                let shape = t.shape().to_vec();
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let data: Vec<f32> = (0..t.numel()).map(|_| rng.normal(0.0, std) as f32).collect();
                *t = Tensor::new(data, &shape).expect("shape unchanged");
            } else if name.ends_with(".gamma") {
                *t = Tensor::full(t.shape(), 1.0);
            } else {
                *t = Tensor::zeros(t.shape());
            }
        }
        for st in self.norms.values_mut() {
            *st = BnState::new(st.channels());
        }
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::data(format!("no parameter named '{name}'")))
    }

    /// Replace a parameter's values (optimizer updates, test surgery).
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::data(format!("no parameter named '{name}'")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn params(&self) -> &IndexMap<String, Tensor> {
        &self.params
    }

    pub fn norms(&self) -> &IndexMap<String, BnState> {
        &self.norms
    }

    pub(crate) fn norms_mut(&mut self) -> &mut IndexMap<String, BnState> {
        &mut self.norms
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clu_ae_bottleneck_and_compression() {
        let spec = ModelSpec::clu_ae(5, (512, 512)).unwrap();
        assert_eq!(spec.bottleneck_shape(), (64, 64, 64));
        let (c, h, w) = spec.bottleneck_shape();
        assert_eq!(c * h * w * 5, 5 * 512 * 512); // 262144 * 5 == 1310720
        assert_eq!(spec.compression_ratio(), 0.2);

        let small = ModelSpec::clu_ae(5, (64, 64)).unwrap();
        assert_eq!(small.bottleneck_shape(), (64, 8, 8));
        assert_eq!(small.compression_ratio(), 0.2);
    }

    #[test]
    fn clu_ae_rejects_indivisible_size() {
        assert!(ModelSpec::clu_ae(5, (100, 100)).is_err());
        assert!(ModelSpec::clu_ae(5, (64, 32)).is_err());
    }

    #[test]
    fn ano_variants_have_paper_filters() {
        let b3 = ModelSpec::ano_ae(AnoVariant::B3, 4, (64, 64)).unwrap();
        assert_eq!(b3.encoder_filters, vec![32, 64, 128, 256]);
        assert_eq!(b3.decoder_filters, vec![128, 64, 32]);
        assert_eq!(b3.kernel_size, 3);

        let s5 = ModelSpec::ano_ae(AnoVariant::S5, 4, (64, 64)).unwrap();
        assert_eq!(s5.kernel_size, 5);
        let state = ModelState::new(s5).unwrap();
        for name in state.param_names() {
            if name.ends_with(".w") && !name.contains("skip") && !name.starts_with("head") {
                let sh = state.param(name).unwrap().shape().to_vec();
                assert_eq!(&sh[2..], &[5, 5], "{name} should be 5x5");
            }
        }
    }

    #[test]
    fn unknown_variant_name_errors() {
        assert!("x7".parse::<AnoVariant>().is_err());
        assert!("b3".parse::<AnoVariant>().is_ok());
    }

    #[test]
    fn mirror_property_for_all_variants() {
        for v in AnoVariant::ALL {
            let spec = ModelSpec::ano_ae(v, 4, (64, 64)).unwrap();
            let mirror: Vec<usize> = spec.encoder_filters[..3].iter().rev().copied().collect();
            assert_eq!(spec.decoder_filters, mirror);
        }
    }

    #[test]
    fn he_init_constants_and_statistics() {
        let spec = ModelSpec::ano_ae(AnoVariant::B3, 4, (64, 64)).unwrap();
        let mut state = ModelState::new(spec).unwrap();
        let mut rng = Rng::seed_from(41);
        state.he_init(&mut rng);
        for (name, t) in state.params().iter() {
            if name.ends_with(".gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else if name.ends_with(".beta") || name.ends_with(".b") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        // 3x3x64-input kernel: variance within 10% of 2/576 over >=1e4 draws
        let w = state.param("enc2.conv2.w").unwrap(); // [64,64,3,3]
        assert_eq!(w.shape()[1] * w.shape()[2] * w.shape()[3], 576);
        assert!(w.numel() >= 10_000, "need >=1e4 elements, got {}", w.numel());
        let mean: f64 = w.data().iter().map(|&v| v as f64).sum::<f64>() / w.numel() as f64;
        let var: f64 =
            w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.numel() as f64;
        let want = 2.0 / 576.0;
        assert!((var - want).abs() < 0.1 * want, "var {var} vs {want}");
    }

    #[test]
    fn he_init_is_seed_deterministic() {
        let spec = ModelSpec::clu_ae(3, (32, 32)).unwrap();
        let mut a = ModelState::new(spec.clone()).unwrap();
        let mut b = ModelState::new(spec).unwrap();
        a.he_init(&mut Rng::seed_from(9));
        b.he_init(&mut Rng::seed_from(9));
        for (name, t) in a.params().iter() {
            let u = b.param(name).unwrap();
            for (x, y) in t.data().iter().zip(u.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn parameter_counts_are_golden() {
        let cases: Vec<(ModelSpec, usize)> = vec![
            (ModelSpec::clu_ae(5, (512, 512)).unwrap(), 49_317),
            (ModelSpec::ano_ae(AnoVariant::S3, 4, (64, 64)).unwrap(), 7_576),
            (ModelSpec::ano_ae(AnoVariant::S5, 4, (64, 64)).unwrap(), 19_864),
            (ModelSpec::ano_ae(AnoVariant::M3, 4, (64, 64)).unwrap(), 6_510),
            (ModelSpec::ano_ae(AnoVariant::M5, 4, (64, 64)).unwrap(), 16_942),
            (ModelSpec::ano_ae(AnoVariant::B3, 4, (64, 64)).unwrap(), 1_843_396),
        ];
        for (spec, want) in cases {
            let state = ModelState::new(spec.clone()).unwrap();
            assert_eq!(state.param_count(), want, "{:?}", spec.family);
        }
    }

    #[test]
    fn width_scaling_keeps_mirror() {
        let spec = ModelSpec::ano_ae(AnoVariant::B3, 4, (64, 64))
            .unwrap()
            .scale_width(0.125)
            .unwrap();
        assert_eq!(spec.encoder_filters, vec![4, 8, 16, 32]);
        assert_eq!(spec.decoder_filters, vec![16, 8, 4]);
    }
}
