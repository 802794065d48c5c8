//! Differentiable operations.
//!
//! Conventions fixed across the crate: convolution is cross-correlation
//! with zero "same" padding and stride 1; pooling is 2x2/stride-2 max;
//! upsampling is x2 nearest-neighbor; losses reduce by mean. Every op
//! checks shapes up front and records enough context for its backward
//! rule.

use rayon::prelude::*;

use super::linalg;
use super::{dims4, Elem, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Train/eval switch for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T: Elem = f32> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Elem> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Producer record for backward dispatch.
pub(crate) enum Op<T: Elem> {
    Add {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Sum {
        x: Tensor<T>,
    },
    Relu {
        x: Tensor<T>,
    },
    Sigmoid {
        x: Tensor<T>,
    },
    Dropout {
        x: Tensor<T>,
        mask: Vec<T>,
    },
    Conv2d {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Tensor<T>,
    },
    MaxPool2 {
        x: Tensor<T>,
        /// Plane-local argmax (y*w+x within each [n,c] plane), one per
        /// output element; first occurrence wins on ties.
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: Tensor<T>,
    },
    BatchNorm {
        x: Tensor<T>,
        gamma: Tensor<T>,
        beta: Tensor<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Mse {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    WeightedMse {
        a: Tensor<T>,
        b: Tensor<T>,
        w: Tensor<T>,
        weight_sum: T,
    },
}

impl<T: Elem> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Add { a, b } => vec![a, b],
            Op::Sum { x } => vec![x],
            Op::Relu { x } => vec![x],
            Op::Sigmoid { x } => vec![x],
            Op::Dropout { x, .. } => vec![x],
            Op::Conv2d { x, w, b } => vec![x, w, b],
            Op::MaxPool2 { x, .. } => vec![x],
            Op::Upsample2 { x } => vec![x],
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Mse { a, b } => vec![a, b],
            Op::WeightedMse { a, b, w, .. } => vec![a, b, w],
        }
    }

    /// Push `grad` through this op into the tracked parents.
    pub(crate) fn backward(&self, out: &Tensor<T>, grad: &[T]) {
        match self {
            Op::Add { a, b } => {
                if a.requires_grad() {
                    a.accumulate_grad(grad);
                }
                if b.requires_grad() {
                    b.accumulate_grad(grad);
                }
            }
            Op::Sum { x } => {
                if x.requires_grad() {
                    x.accumulate_grad(&vec![grad[0]; x.numel()]);
                }
            }
            Op::Relu { x } => {
                if x.requires_grad() {
                    let dx: Vec<T> = x
                        .data()
                        .iter()
                        .zip(grad)
                        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    x.accumulate_grad(&dx);
                }
            }
            Op::Sigmoid { x } => {
                if x.requires_grad() {
                    let dx: Vec<T> = out
                        .data()
                        .iter()
                        .zip(grad)
                        .map(|(&s, &g)| g * s * (T::one() - s))
                        .collect();
                    x.accumulate_grad(&dx);
                }
            }
            Op::Dropout { x, mask } => {
                if x.requires_grad() {
                    let dx: Vec<T> = mask.iter().zip(grad).map(|(&m, &g)| m * g).collect();
                    x.accumulate_grad(&dx);
                }
            }
            Op::Conv2d { x, w, b } => conv2d_backward(x, w, b, grad),
            Op::MaxPool2 { x, argmax } => {
                if x.requires_grad() {
                    let (_, _, h, wdt) = dims4(x, "maxpool input").expect("validated in forward");
                    let (oh, ow) = (h / 2, wdt / 2);
                    let mut dx = vec![T::zero(); x.numel()];
                    dx.par_chunks_mut(h * wdt).enumerate().for_each(|(plane, dplane)| {
                        let gplane = &grad[plane * oh * ow..(plane + 1) * oh * ow];
                        let aplane = &argmax[plane * oh * ow..(plane + 1) * oh * ow];
                        for (g, &arg) in gplane.iter().zip(aplane) {
                            dplane[arg as usize] += *g;
                        }
                    });
                    x.accumulate_grad(&dx);
                }
            }
            Op::Upsample2 { x } => {
                if x.requires_grad() {
                    let (_, _, h, wdt) = dims4(x, "upsample input").expect("validated in forward");
                    let (oh, ow) = (2 * h, 2 * wdt);
                    let mut dx = vec![T::zero(); x.numel()];
                    dx.par_chunks_mut(h * wdt).enumerate().for_each(|(plane, dplane)| {
                        let gplane = &grad[plane * oh * ow..(plane + 1) * oh * ow];
                        for y in 0..h {
                            for xx in 0..wdt {
                                let mut acc = T::zero();
                                for dy in 0..2 {
                                    for dx2 in 0..2 {
                                        acc += gplane[(2 * y + dy) * ow + 2 * xx + dx2];
                                    }
                                }
                                dplane[y * wdt + xx] += acc;
                            }
                        }
                    });
                    x.accumulate_grad(&dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => batchnorm_backward(x, gamma, beta, mean, inv_std, *train, grad),
            Op::Mse { a, b } => {
                let g = grad[0];
                let n = T::from64(a.numel() as f64);
                let two = T::from64(2.0);
                if a.requires_grad() {
                    let da: Vec<T> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&av, &bv)| g * two * (av - bv) / n)
                        .collect();
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let db: Vec<T> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&av, &bv)| g * two * (bv - av) / n)
                        .collect();
                    b.accumulate_grad(&db);
                }
            }
            Op::WeightedMse { a, b, w, weight_sum } => {
                let g = grad[0];
                let two = T::from64(2.0);
                let ws = *weight_sum;
                if a.requires_grad() {
                    let da: Vec<T> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .zip(w.data())
                        .map(|((&av, &bv), &wv)| g * two * wv * (av - bv) / ws)
                        .collect();
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let db: Vec<T> = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .zip(w.data())
                        .map(|((&av, &bv), &wv)| g * two * wv * (bv - av) / ws)
                        .collect();
                    b.accumulate_grad(&db);
                }
            }
        }
    }
}

impl<T: Elem> Tensor<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Add {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = 0.0f64;
        for v in self.data() {
            acc += v.to64();
        }
        Tensor::from_op(vec![T::from64(acc)], Vec::new(), Op::Sum { x: self.clone() })
    }

    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Relu { x: self.clone() })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| stable_sigmoid(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Sigmoid { x: self.clone() })
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors scale by `1/(1-rate)`; eval mode
    /// and `rate == 0` are the identity.
    pub fn dropout(&self, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::parameter(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(self.clone());
        }
        let scale = T::from64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.uniform() < rate { T::zero() } else { scale })
            .collect();
        let data: Vec<T> = self.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Dropout { x: self.clone(), mask },
        ))
    }

    /// Mean squared error between two same-shape tensors, as a scalar.
    pub fn mse_loss(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "mse_loss: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut acc = 0.0f64;
        for (&a, &b) in self.data().iter().zip(other.data()) {
            let d = (a - b).to64();
            acc += d * d;
        }
        let value = T::from64(acc / self.numel() as f64);
        Ok(Tensor::from_op(
            vec![value],
            Vec::new(),
            Op::Mse {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Weighted mean squared error `sum(w*(a-b)^2) / sum(w)`. The weights
    /// are a constant (masked-loss support); their sum must be positive.
    pub fn mse_loss_weighted(&self, other: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() || self.shape() != weights.shape() {
            return Err(Error::shape(format!(
                "mse_loss_weighted: {:?} vs {:?} vs weights {:?}",
                self.shape(),
                other.shape(),
                weights.shape()
            )));
        }
        let mut acc = 0.0f64;
        let mut wsum = 0.0f64;
        for ((&a, &b), &w) in self.data().iter().zip(other.data()).zip(weights.data()) {
            let d = (a - b).to64();
            acc += w.to64() * d * d;
            wsum += w.to64();
        }
        if wsum <= 0.0 {
            return Err(Error::degenerate("weighted mse: weight sum is zero"));
        }
        Ok(Tensor::from_op(
            vec![T::from64(acc / wsum)],
            Vec::new(),
            Op::WeightedMse {
                a: self.clone(),
                b: other.clone(),
                w: weights.clone(),
                weight_sum: T::from64(wsum),
            },
        ))
    }

    /// 2D cross-correlation with zero "same" padding and stride 1.
    /// `self` is `[N,C,H,W]`, `kernel` is `[F,C,k,k]` with odd `k`,
    /// `bias` is `[F]`; the result is `[N,F,H,W]`.
    pub fn conv2d(&self, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = dims4(self, "conv2d input")?;
        let (f, kc, kh, kw) = dims4(kernel, "conv2d kernel")?;
        if kh != kw {
            return Err(Error::shape(format!(
                "conv2d kernel must be square, got {kh}x{kw}"
            )));
        }
        if kh % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d kernel size must be odd for same padding, got {kh}"
            )));
        }
        if kc != c {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {kc}"
            )));
        }
        if bias.shape() != [f] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{f}], got {:?}",
                bias.shape()
            )));
        }
        let k = kh;
        let plane = h * w;
        let ckk = c * k * k;
        let mut out = vec![T::zero(); n * f * plane];
        let xdata = self.data();
        let wdata = kernel.data();
        let bdata = bias.data();
        out.par_chunks_mut(f * plane).enumerate().for_each(|(img, oimg)| {
            let mut col = vec![T::zero(); ckk * plane];
            linalg::im2col(&xdata[img * c * plane..(img + 1) * c * plane], c, h, w, k, &mut col);
            linalg::matmul_acc(oimg, wdata, &col, f, ckk, plane);
            for (fi, orow) in oimg.chunks_mut(plane).enumerate() {
                let b = bdata[fi];
                for v in orow.iter_mut() {
                    *v += b;
                }
            }
        });
        Ok(Tensor::from_op(
            out,
            vec![n, f, h, w],
            Op::Conv2d {
                x: self.clone(),
                w: kernel.clone(),
                b: bias.clone(),
            },
        ))
    }

    /// 2x2 max pooling with stride 2; requires even spatial extents.
    pub fn maxpool2d(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = dims4(self, "maxpool input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "maxpool2d requires even spatial extents, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        let xdata = self.data();
        out.par_chunks_mut(oh * ow)
            .zip(argmax.par_chunks_mut(oh * ow))
            .enumerate()
            .for_each(|(plane, (oplane, aplane))| {
                let xplane = &xdata[plane * h * w..(plane + 1) * h * w];
                for y in 0..oh {
                    for x in 0..ow {
                        let mut best = xplane[(2 * y) * w + 2 * x];
                        let mut besti = ((2 * y) * w + 2 * x) as u32;
                        // row-major window scan; strict > keeps the first tie
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = (2 * y + dy) * w + 2 * x + dx;
                                if xplane[idx] > best {
                                    best = xplane[idx];
                                    besti = idx as u32;
                                }
                            }
                        }
                        oplane[y * ow + x] = best;
                        aplane[y * ow + x] = besti;
                    }
                }
            });
        Ok(Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            Op::MaxPool2 {
                x: self.clone(),
                argmax,
            },
        ))
    }

    /// x2 nearest-neighbor upsampling.
    pub fn upsample2d(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = dims4(self, "upsample input")?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * oh * ow];
        let xdata = self.data();
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, oplane)| {
            let xplane = &xdata[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                let srow = &xplane[(y / 2) * w..(y / 2 + 1) * w];
                let drow = &mut oplane[y * ow..(y + 1) * ow];
                for x in 0..ow {
                    drow[x] = srow[x / 2];
                }
            }
        });
        Ok(Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            Op::Upsample2 { x: self.clone() },
        ))
    }

    /// Per-channel batch normalization over `(N,H,W)`.
    ///
    /// Train mode normalizes with batch statistics and folds them into
    /// `state` by exponential moving average (unbiased variance, like
    /// the usual framework convention); eval mode applies the running
    /// statistics. Both modes differentiate w.r.t. input, gamma, beta.
    pub fn batchnorm2d(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        state: &mut BnState<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let (n, c, h, w) = dims4(self, "batchnorm input")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(format!(
                "batchnorm gamma/beta must be [{c}], got {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        if state.channels() != c {
            return Err(Error::shape(format!(
                "batchnorm state has {} channels, input has {c}",
                state.channels()
            )));
        }
        if mode == Mode::Eval {
            return self.batchnorm2d_eval(gamma, beta, state);
        }
        let m = n * h * w;
        if m < 2 {
            return Err(Error::degenerate(
                "batchnorm in train mode needs at least 2 elements per channel",
            ));
        }
        let plane = h * w;
        let eps = state.eps;

        // Per-channel batch statistics (f64 accumulation).
        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        let stats: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ch| {
                let mut acc = 0.0f64;
                for img in 0..n {
                    let base = (img * c + ch) * plane;
                    for v in &self.data()[base..base + plane] {
                        acc += v.to64();
                    }
                }
                let mu = acc / m as f64;
                let mut var = 0.0f64;
                for img in 0..n {
                    let base = (img * c + ch) * plane;
                    for v in &self.data()[base..base + plane] {
                        let d = v.to64() - mu;
                        var += d * d;
                    }
                }
                (mu, var / m as f64)
            })
            .collect();
        for (ch, (mu, var)) in stats.iter().enumerate() {
            mean[ch] = T::from64(*mu);
            inv_std[ch] = T::from64(1.0 / (var + eps).sqrt());
            let mom = state.momentum;
            let unbiased = var * m as f64 / (m as f64 - 1.0);
            state.running_mean[ch] =
                T::from64((1.0 - mom) * state.running_mean[ch].to64() + mom * mu);
            state.running_var[ch] =
                T::from64((1.0 - mom) * state.running_var[ch].to64() + mom * unbiased);
        }

        Ok(self.bn_affine(gamma, beta, mean, inv_std, true))
    }

    /// Batch normalization with frozen running statistics; never mutates
    /// state, safe to share across threads.
    pub fn batchnorm2d_eval(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        state: &BnState<T>,
    ) -> Result<Tensor<T>> {
        let (_, c, _, _) = dims4(self, "batchnorm input")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(format!(
                "batchnorm gamma/beta must be [{c}], got {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        if state.channels() != c {
            return Err(Error::shape(format!(
                "batchnorm state has {} channels, input has {c}",
                state.channels()
            )));
        }
        let mean = state.running_mean.clone();
        let inv_std: Vec<T> = state
            .running_var
            .iter()
            .map(|v| T::from64(1.0 / (v.to64() + state.eps).sqrt()))
            .collect();
        Ok(self.bn_affine(gamma, beta, mean, inv_std, false))
    }

    fn bn_affine(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    ) -> Tensor<T> {
        let c = mean.len();
        let plane = self.numel() / (self.shape()[0] * c);
        let gdata = gamma.data();
        let bdata = beta.data();
        let xdata = self.data();
        let mut out = vec![T::zero(); self.numel()];
        out.par_chunks_mut(plane).enumerate().for_each(|(pidx, oplane)| {
            let ch = pidx % c;
            let (mu, istd, ga, be) = (mean[ch], inv_std[ch], gdata[ch], bdata[ch]);
            let xplane = &xdata[pidx * plane..(pidx + 1) * plane];
            for (o, &v) in oplane.iter_mut().zip(xplane) {
                *o = (v - mu) * istd * ga + be;
            }
        });
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::BatchNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                mean,
                inv_std,
                train,
            },
        )
    }
}

#[inline]
fn stable_sigmoid<T: Elem>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn conv2d_backward<T: Elem>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, grad: &[T]) {
    let (n, c, h, wdt) = dims4(x, "conv input").expect("validated in forward");
    let (f, _, k, _) = dims4(w, "conv kernel").expect("validated in forward");
    let plane = h * wdt;
    let ckk = c * k * k;

    if b.requires_grad() {
        let mut db = vec![T::zero(); f];
        for img in 0..n {
            for (fi, dbf) in db.iter_mut().enumerate() {
                let base = (img * f + fi) * plane;
                for g in &grad[base..base + plane] {
                    *dbf += *g;
                }
            }
        }
        b.accumulate_grad(&db);
    }

    if w.requires_grad() {
        // dW[f,p] = sum_n sum_hw grad[n,f,hw] * col_n[p,hw]
        let mut dw = vec![T::zero(); f * ckk];
        let mut col = vec![T::zero(); ckk * plane];
        for img in 0..n {
            linalg::im2col(
                &x.data()[img * c * plane..(img + 1) * c * plane],
                c,
                h,
                wdt,
                k,
                &mut col,
            );
            let gimg = &grad[img * f * plane..(img + 1) * f * plane];
            dw.par_chunks_mut(ckk).enumerate().for_each(|(fi, dwrow)| {
                let grow = &gimg[fi * plane..(fi + 1) * plane];
                for (p, dwp) in dwrow.iter_mut().enumerate() {
                    let crow = &col[p * plane..(p + 1) * plane];
                    let mut acc = T::zero();
                    for (g, cv) in grow.iter().zip(crow) {
                        acc += *g * *cv;
                    }
                    *dwp += acc;
                }
            });
        }
        w.accumulate_grad(&dw);
    }

    if x.requires_grad() {
        let wt = linalg::transpose(w.data(), f, ckk); // [ckk, f]
        let mut dx = vec![T::zero(); x.numel()];
        dx.par_chunks_mut(c * plane).enumerate().for_each(|(img, dximg)| {
            let gimg = &grad[img * f * plane..(img + 1) * f * plane];
            let colgrad = linalg::matmul(&wt, gimg, ckk, f, plane);
            linalg::col2im_acc(&colgrad, c, h, wdt, k, dximg);
        });
        x.accumulate_grad(&dx);
    }
}

fn batchnorm_backward<T: Elem>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    train: bool,
    grad: &[T],
) {
    let (n, c, h, w) = dims4(x, "batchnorm input").expect("validated in forward");
    let plane = h * w;
    let m = (n * plane) as f64;

    // Per-channel reductions: sum g and sum g*xhat.
    let sums: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mu = mean[ch].to64();
            let istd = inv_std[ch].to64();
            let mut sg = 0.0f64;
            let mut sgx = 0.0f64;
            for img in 0..n {
                let base = (img * c + ch) * plane;
                for i in base..base + plane {
                    let g = grad[i].to64();
                    let xhat = (x.data()[i].to64() - mu) * istd;
                    sg += g;
                    sgx += g * xhat;
                }
            }
            (sg, sgx)
        })
        .collect();

    if beta.requires_grad() {
        let db: Vec<T> = sums.iter().map(|(sg, _)| T::from64(*sg)).collect();
        beta.accumulate_grad(&db);
    }
    if gamma.requires_grad() {
        let dg: Vec<T> = sums.iter().map(|(_, sgx)| T::from64(*sgx)).collect();
        gamma.accumulate_grad(&dg);
    }
    if x.requires_grad() {
        let mut dx = vec![T::zero(); x.numel()];
        dx.par_chunks_mut(plane).enumerate().for_each(|(pidx, dplane)| {
            let ch = pidx % c;
            let mu = mean[ch].to64();
            let istd = inv_std[ch].to64();
            let ga = gamma.data()[ch].to64();
            let (sg, sgx) = sums[ch];
            let xplane = &x.data()[pidx * plane..(pidx + 1) * plane];
            let gplane = &grad[pidx * plane..(pidx + 1) * plane];
            if train {
                for ((d, &g), &v) in dplane.iter_mut().zip(gplane).zip(xplane) {
                    let xhat = (v.to64() - mu) * istd;
                    let val = ga * istd * (g.to64() - sg / m - xhat * sgx / m);
                    *d = T::from64(val);
                }
            } else {
                for (d, &g) in dplane.iter_mut().zip(gplane) {
                    *d = T::from64(g.to64() * ga * istd);
                }
            }
        });
        x.accumulate_grad(&dx);
    }
}
