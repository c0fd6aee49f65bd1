//! Layer kinds and their forward/backward passes.
//!
//! Image activations are NHWC (`[batch, height, width, channels]`), flat
//! activations are `[batch, features]`. Convolution is lowered to a matrix
//! product through an im2col buffer that is kept for the backward pass.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{MixerError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero padding of `(kernel - 1) / 2` on every side (odd kernels).
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub filters: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub padding: Padding,
    pub activation: Activation,
    /// `[kernel, kernel, in_channels, filters]`
    pub weight: Tensor,
    /// `[filters]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    /// `[inputs, units]`
    pub weight: Tensor,
    /// `[units]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool2d { window: usize },
    Dense(Dense),
    Dropout { rate: f64 },
    Flatten,
    Softmax,
}

/// State saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv {
        cols: Vec<f64>,
        input_shape: Vec<usize>,
        output: Tensor,
    },
    Dense {
        input: Tensor,
        output: Tensor,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Dropout {
        mask: Vec<f64>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Softmax {
        output: Tensor,
    },
}

/// Gradients of one layer's parameters, laid out like the parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// He-uniform initialisation, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape and data built together")
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        Self {
            filters,
            kernel,
            in_channels,
            padding,
            activation,
            weight: he_uniform(vec![kernel, kernel, in_channels, filters], fan_in, rng),
            bias: Tensor::zeros(vec![filters]),
        }
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => (self.kernel - 1) / 2,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let p = self.pad();
        let ho = (h + 2 * p).checked_sub(self.kernel)? + 1;
        let wo = (w + 2 * p).checked_sub(self.kernel)? + 1;
        Some((ho, wo))
    }

    fn im2col(&self, x: &Tensor) -> (Vec<f64>, usize, usize) {
        let s = x.shape();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = self.out_hw(h, w).expect("validated by output_shape");
        let k = self.kernel;
        let p = self.pad() as isize;
        let row_len = k * k * c;
        let mut cols = vec![0.0; b * ho * wo * row_len];
        let xd = x.data();
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((bi * ho + oy) * wo + ox) * row_len;
                    for ky in 0..k {
                        let iy = oy as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize + kx as isize - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((bi * h + iy as usize) * w + ix as usize) * c;
                            let dst = row + (ky * k + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                        }
                    }
                }
            }
        }
        (cols, ho, wo)
    }

    fn col2im(&self, dcols: &[f64], input_shape: &[usize]) -> Tensor {
        let (b, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
        let (ho, wo) = self.out_hw(h, w).expect("validated on forward");
        let k = self.kernel;
        let p = self.pad() as isize;
        let row_len = k * k * c;
        let mut dx = Tensor::zeros(input_shape.to_vec());
        let dxd = dx.data_mut();
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((bi * ho + oy) * wo + ox) * row_len;
                    for ky in 0..k {
                        let iy = oy as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize + kx as isize - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((bi * h + iy as usize) * w + ix as usize) * c;
                            let src = row + (ky * k + kx) * c;
                            for ci in 0..c {
                                dxd[dst + ci] += dcols[src + ci];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Dense {
    pub fn new(inputs: usize, units: usize, activation: Activation, rng: &mut ChaCha20Rng) -> Self {
        Self {
            inputs,
            units,
            activation,
            weight: he_uniform(vec![inputs, units], inputs, rng),
            bias: Tensor::zeros(vec![units]),
        }
    }
}

fn add_bias_activate(out: &mut [f64], bias: &[f64], activation: Activation) {
    let n = bias.len();
    for row in out.chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
            if activation == Activation::Relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn activation_backward(grad: &mut [f64], output: &[f64], activation: Activation) {
    if activation == Activation::Relu {
        for (g, o) in grad.iter_mut().zip(output) {
            if *o <= 0.0 {
                *g = 0.0;
            }
        }
    }
}

fn bias_grad(grad: &[f64], n: usize) -> Vec<f64> {
    let mut gb = vec![0.0; n];
    for row in grad.chunks(n) {
        for (acc, g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    gb
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let n = x.row_len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Dense(_) => "dense",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::Softmax => "softmax",
        }
    }

    /// Output shape (without the batch dimension) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| MixerError::InputShape {
            expected,
            actual: input.to_vec(),
        };
        match self {
            Layer::Conv2d(conv) => {
                if input.len() != 3 || input[2] != conv.in_channels {
                    return Err(mismatch(vec![0, 0, conv.in_channels]));
                }
                let (ho, wo) = conv
                    .out_hw(input[0], input[1])
                    .ok_or_else(|| mismatch(vec![conv.kernel, conv.kernel, conv.in_channels]))?;
                Ok(vec![ho, wo, conv.filters])
            }
            Layer::MaxPool2d { window } => {
                if input.len() != 3 || input[0] < *window || input[1] < *window {
                    return Err(mismatch(vec![*window, *window, 0]));
                }
                Ok(vec![input[0] / window, input[1] / window, input[2]])
            }
            Layer::Dense(dense) => {
                if input.len() != 1 || input[0] != dense.inputs {
                    return Err(mismatch(vec![dense.inputs]));
                }
                Ok(vec![dense.units])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dropout { .. } | Layer::Softmax => Ok(input.to_vec()),
        }
    }

    /// Deterministic inference-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, None).map(|(out, _)| out)
    }

    /// Training-mode forward pass; dropout draws its mask from `rng`.
    pub fn forward_train(&self, x: &Tensor, rng: &mut ChaCha20Rng) -> Result<(Tensor, Cache)> {
        let (out, cache) = self.run(x, Some(rng))?;
        Ok((out, cache.expect("training mode always caches")))
    }

    fn run(&self, x: &Tensor, rng: Option<&mut ChaCha20Rng>) -> Result<(Tensor, Option<Cache>)> {
        let train = rng.is_some();
        let batch = x.rows();
        let out_shape = self.output_shape(&x.shape()[1..])?;
        let mut full_shape = vec![batch];
        full_shape.extend_from_slice(&out_shape);
        match self {
            Layer::Conv2d(conv) => {
                let (cols, ho, wo) = conv.im2col(x);
                let rows = batch * ho * wo;
                let kk = conv.kernel * conv.kernel * conv.in_channels;
                let mut out = vec![0.0; rows * conv.filters];
                gemm(
                    rows,
                    kk,
                    conv.filters,
                    &cols,
                    false,
                    conv.weight.data(),
                    false,
                    &mut out,
                    0.0,
                );
                add_bias_activate(&mut out, conv.bias.data(), conv.activation);
                let out = Tensor::new(full_shape, out)?;
                let cache = train.then(|| Cache::Conv {
                    cols,
                    input_shape: x.shape().to_vec(),
                    output: out.clone(),
                });
                Ok((out, cache))
            }
            Layer::MaxPool2d { window } => {
                let s = x.shape();
                let (h, w, c) = (s[1], s[2], s[3]);
                let (ho, wo) = (out_shape[0], out_shape[1]);
                let mut out = vec![0.0; batch * ho * wo * c];
                let mut argmax = vec![0usize; out.len()];
                let xd = x.data();
                for bi in 0..batch {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for ci in 0..c {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for dy in 0..*window {
                                    for dx in 0..*window {
                                        let iy = oy * window + dy;
                                        let ix = ox * window + dx;
                                        let idx = ((bi * h + iy) * w + ix) * c + ci;
                                        if xd[idx] > best {
                                            best = xd[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                let o = ((bi * ho + oy) * wo + ox) * c + ci;
                                out[o] = best;
                                argmax[o] = best_idx;
                            }
                        }
                    }
                }
                let cache = train.then(|| Cache::MaxPool {
                    argmax,
                    input_shape: x.shape().to_vec(),
                });
                Ok((Tensor::new(full_shape, out)?, cache))
            }
            Layer::Dense(dense) => {
                let mut out = vec![0.0; batch * dense.units];
                gemm(
                    batch,
                    dense.inputs,
                    dense.units,
                    x.data(),
                    false,
                    dense.weight.data(),
                    false,
                    &mut out,
                    0.0,
                );
                add_bias_activate(&mut out, dense.bias.data(), dense.activation);
                let out = Tensor::new(full_shape, out)?;
                let cache = train.then(|| Cache::Dense {
                    input: x.clone(),
                    output: out.clone(),
                });
                Ok((out, cache))
            }
            Layer::Dropout { rate } => match rng {
                None => Ok((x.clone(), None)),
                Some(rng) => {
                    let keep = 1.0 - rate;
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    Ok((Tensor::new(full_shape, data)?, Some(Cache::Dropout { mask })))
                }
            },
            Layer::Flatten => {
                let out = x.clone().reshape(full_shape)?;
                let cache = train.then(|| Cache::Flatten {
                    input_shape: x.shape().to_vec(),
                });
                Ok((out, cache))
            }
            Layer::Softmax => {
                let out = softmax_rows(x);
                let cache = train.then(|| Cache::Softmax { output: out.clone() });
                Ok((out, cache))
            }
        }
    }

    /// Propagates `grad` (dL/d output) back through the layer, returning
    /// dL/d input and, for parametric layers, the parameter gradients.
    pub fn backward(&self, cache: &Cache, grad: &Tensor) -> Result<(Tensor, Option<ParamGrads>)> {
        match (self, cache) {
            (
                Layer::Conv2d(conv),
                Cache::Conv {
                    cols,
                    input_shape,
                    output,
                },
            ) => {
                let mut g = grad.data().to_vec();
                activation_backward(&mut g, output.data(), conv.activation);
                let rows = output.len() / conv.filters;
                let kk = conv.kernel * conv.kernel * conv.in_channels;
                let mut gw = vec![0.0; kk * conv.filters];
                gemm(kk, rows, conv.filters, cols, true, &g, false, &mut gw, 0.0);
                let gb = bias_grad(&g, conv.filters);
                let mut dcols = vec![0.0; rows * kk];
                gemm(
                    rows,
                    conv.filters,
                    kk,
                    &g,
                    false,
                    conv.weight.data(),
                    true,
                    &mut dcols,
                    0.0,
                );
                let dx = conv.col2im(&dcols, input_shape);
                Ok((dx, Some(ParamGrads { weight: gw, bias: gb })))
            }
            (Layer::Dense(dense), Cache::Dense { input, output }) => {
                let mut g = grad.data().to_vec();
                activation_backward(&mut g, output.data(), dense.activation);
                let batch = input.rows();
                let mut gw = vec![0.0; dense.inputs * dense.units];
                gemm(
                    dense.inputs,
                    batch,
                    dense.units,
                    input.data(),
                    true,
                    &g,
                    false,
                    &mut gw,
                    0.0,
                );
                let gb = bias_grad(&g, dense.units);
                let mut dx = vec![0.0; batch * dense.inputs];
                gemm(
                    batch,
                    dense.units,
                    dense.inputs,
                    &g,
                    false,
                    dense.weight.data(),
                    true,
                    &mut dx,
                    0.0,
                );
                Ok((
                    Tensor::new(input.shape().to_vec(), dx)?,
                    Some(ParamGrads { weight: gw, bias: gb }),
                ))
            }
            (Layer::MaxPool2d { .. }, Cache::MaxPool { argmax, input_shape }) => {
                let mut dx = Tensor::zeros(input_shape.clone());
                let dxd = dx.data_mut();
                for (g, &idx) in grad.data().iter().zip(argmax) {
                    dxd[idx] += g;
                }
                Ok((dx, None))
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                let data = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Ok((Tensor::new(grad.shape().to_vec(), data)?, None))
            }
            (Layer::Flatten, Cache::Flatten { input_shape }) => Ok((grad.clone().reshape(input_shape.clone())?, None)),
            (Layer::Softmax, Cache::Softmax { output }) => {
                let n = output.row_len();
                let mut dx = grad.clone();
                for (row_g, row_p) in dx.data_mut().chunks_mut(n).zip(output.data().chunks(n)) {
                    let dot: f64 = row_g.iter().zip(row_p).map(|(g, p)| g * p).sum();
                    for (g, p) in row_g.iter_mut().zip(row_p) {
                        *g = p * (*g - dot);
                    }
                }
                Ok((dx, None))
            }
            _ => Err(MixerError::Config(format!(
                "cache does not belong to a {} layer",
                self.kind_name()
            ))),
        }
    }

    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    #[test]
    fn he_uniform_respects_bound() {
        let t = he_uniform(vec![3, 3, 4, 8], 36, &mut rng());
        let bound = (6.0f64 / 36.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn valid_and_same_conv_shapes() {
        let mut r = rng();
        let valid = Layer::Conv2d(Conv2d::new(1, 64, 5, Padding::Valid, Activation::Relu, &mut r));
        assert_eq!(valid.output_shape(&[28, 28, 1]).unwrap(), vec![24, 24, 64]);
        let same = Layer::Conv2d(Conv2d::new(3, 32, 3, Padding::Same, Activation::Relu, &mut r));
        assert_eq!(same.output_shape(&[32, 32, 3]).unwrap(), vec![32, 32, 32]);
        assert!(valid.output_shape(&[28, 28, 3]).is_err());
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut r = rng();
        let conv = Conv2d::new(2, 3, 3, Padding::Same, Activation::Linear, &mut r);
        let x = Tensor::new(vec![1, 4, 5, 2], (0..40).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let out = Layer::Conv2d(conv.clone()).forward(&x).unwrap();
        let w = conv.weight.data();
        for oy in 0..4 {
            for ox in 0..5 {
                for f in 0..3 {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = oy as isize + ky as isize - 1;
                            let ix = ox as isize + kx as isize - 1;
                            if !(0..4).contains(&iy) || !(0..5).contains(&ix) {
                                continue;
                            }
                            for c in 0..2 {
                                let xv = x.data()[((iy as usize) * 5 + ix as usize) * 2 + c];
                                acc += xv * w[((ky * 3 + kx) * 2 + c) * 3 + f];
                            }
                        }
                    }
                    let got = out.data()[(oy * 5 + ox) * 3 + f];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_picks_window_maximum() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![0.1, 0.9, 0.4, 0.3]).unwrap();
        let out = Layer::MaxPool2d { window: 2 }.forward(&x).unwrap();
        assert_eq!(out.data(), &[0.9]);
    }

    #[test]
    fn dropout_is_identity_in_inference() {
        let x = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let out = Layer::Dropout { rate: 0.5 }.forward(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn dropout_training_scales_survivors() {
        let x = Tensor::filled(vec![1, 1000], 1.0);
        let (out, _) = Layer::Dropout { rate: 0.2 }.forward_train(&x, &mut rng()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let kept = out.data().iter().filter(|&&v| v > 0.0).count();
        assert!((700..900).contains(&kept));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::filled(vec![1, 4], 3.7);
        let out = Layer::Softmax.forward(&x).unwrap();
        for v in out.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}
