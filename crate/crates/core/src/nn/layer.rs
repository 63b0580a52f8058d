//! Layer descriptors and their forward/backward kernels.
//!
//! Activations flow through the layers as batches: a tensor whose leading axis
//! indexes samples. Backward passes accept a batch of cotangents that may be
//! larger than the cached forward batch when the forward batch holds a single
//! sample; this lets one forward pass serve one backward pass per class.

use serde::{Deserialize, Serialize};

use super::linalg::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use crate::tensor::Tensor;

pub(crate) const BATCHNORM_EPS: f64 = 1e-5;
pub(crate) const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Rectifier,
    Softplus {
        beta: f64,
    },
    Flatten,
    BatchNorm {
        channels: usize,
    },
}

/// A parameter slot owned by a layer.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub suffix: &'static str,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Running statistics, no parameter-gradient caches.
    Inference,
    /// Running statistics with caches for parameter gradients.
    InferenceWithCache,
    /// Batch statistics with caches for parameter gradients.
    Training,
}

impl Mode {
    fn keeps_cache(self) -> bool {
        self != Mode::Inference
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cache {
    None,
    Input(Tensor),
    Conv { cols: Vec<f64> },
    Norm {
        normalized: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

/// Batch statistics observed by a batchnorm layer in training mode.
#[derive(Debug, Clone)]
pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Rectifier => "rectifier",
            Layer::Softplus { .. } => "softplus",
            Layer::Flatten => "flatten",
            Layer::BatchNorm { .. } => "batchnorm",
        }
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, Layer::Rectifier | Layer::Softplus { .. })
    }

    /// Per-sample output shape, or `None` when `input` is not accepted.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            Layer::Dense { inputs, outputs } => (input == [inputs]).then(|| vec![outputs]),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels || stride == 0 || kernel == 0 {
                    return None;
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel || w < kernel {
                    return None;
                }
                Some(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            Layer::Rectifier | Layer::Softplus { .. } => Some(input.to_vec()),
            Layer::Flatten => Some(vec![input.iter().product()]),
            Layer::BatchNorm { channels } => {
                (!input.is_empty() && input[0] == channels).then(|| input.to_vec())
            }
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let spec = |suffix, shape, trainable| ParamSpec {
            suffix,
            shape,
            trainable,
        };
        match *self {
            Layer::Dense { inputs, outputs } => vec![
                spec("weight", vec![outputs, inputs], true),
                spec("bias", vec![outputs], true),
            ],
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                spec("weight", vec![out_channels, in_channels, kernel, kernel], true),
                spec("bias", vec![out_channels], true),
            ],
            Layer::BatchNorm { channels } => vec![
                spec("gamma", vec![channels], true),
                spec("beta", vec![channels], true),
                spec("running_mean", vec![channels], false),
                spec("running_var", vec![channels], false),
            ],
            _ => Vec::new(),
        }
    }

    /// Fan-in used for weight initialization.
    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => 1,
        }
    }

    /// `input` has shape `[batch, ...in_shape]`; returns `[batch, ...out_shape]`.
    pub(crate) fn forward(
        &self,
        params: &[&Tensor],
        input: &Tensor,
        in_shape: &[usize],
        out_shape: &[usize],
        mode: Mode,
    ) -> (Tensor, Cache, Option<NormStats>) {
        let batch = input.shape()[0];
        let mut shape = vec![batch];
        shape.extend_from_slice(out_shape);
        let x = input.data();
        match *self {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = (params[0].data(), params[1].data());
                let mut out = Vec::with_capacity(batch * outputs);
                for _ in 0..batch {
                    out.extend_from_slice(b);
                }
                matmul_a_bt_acc(x, w, &mut out, batch, inputs, outputs);
                let cache = if mode.keeps_cache() {
                    Cache::Input(input.clone())
                } else {
                    Cache::None
                };
                (tensor(shape, out), cache, None)
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeometry::new(in_shape, out_shape, kernel, stride, padding);
                let (w, b) = (params[0].data(), params[1].data());
                let k_len = in_channels * kernel * kernel;
                let hw = geom.out_h * geom.out_w;
                let in_len = geom.in_len();
                let mut out = vec![0.0; batch * out_channels * hw];
                let keep_cols = mode.keeps_cache();
                let mut all_cols = Vec::with_capacity(if keep_cols { batch * k_len * hw } else { 0 });
                let mut cols = vec![0.0; k_len * hw];
                for s in 0..batch {
                    geom.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
                    let o = &mut out[s * out_channels * hw..(s + 1) * out_channels * hw];
                    for (c, chunk) in o.chunks_mut(hw).enumerate() {
                        chunk.fill(b[c]);
                    }
                    matmul_acc(w, &cols, o, out_channels, k_len, hw);
                    if keep_cols {
                        all_cols.extend_from_slice(&cols);
                    }
                }
                let cache = if keep_cols {
                    Cache::Conv { cols: all_cols }
                } else {
                    Cache::None
                };
                (tensor(shape, out), cache, None)
            }
            Layer::Rectifier => (
                tensor(shape, x.iter().map(|&v| v.max(0.0)).collect()),
                Cache::Input(input.clone()),
                None,
            ),
            Layer::Softplus { beta } => (
                tensor(shape, x.iter().map(|&v| softplus(v, beta)).collect()),
                Cache::Input(input.clone()),
                None,
            ),
            Layer::Flatten => (tensor(shape, x.to_vec()), Cache::None, None),
            Layer::BatchNorm { channels } => {
                let spatial: usize = in_shape[1..].iter().product();
                let (gamma, beta) = (params[0].data(), params[1].data());
                let (mean, var, stats) = match mode {
                    Mode::Training => {
                        let n = (batch * spatial) as f64;
                        let mut mean = vec![0.0; channels];
                        let mut var = vec![0.0; channels];
                        for s in 0..batch {
                            for c in 0..channels {
                                let off = (s * channels + c) * spatial;
                                mean[c] += x[off..off + spatial].iter().sum::<f64>();
                            }
                        }
                        mean.iter_mut().for_each(|m| *m /= n);
                        for s in 0..batch {
                            for c in 0..channels {
                                let off = (s * channels + c) * spatial;
                                var[c] += x[off..off + spatial]
                                    .iter()
                                    .map(|v| (v - mean[c]).powi(2))
                                    .sum::<f64>();
                            }
                        }
                        var.iter_mut().for_each(|v| *v /= n);
                        let unbiased = var
                            .iter()
                            .map(|v| if n > 1.0 { v * n / (n - 1.0) } else { *v })
                            .collect();
                        let stats = NormStats {
                            mean: mean.clone(),
                            var_unbiased: unbiased,
                        };
                        (mean, var, Some(stats))
                    }
                    Mode::Inference | Mode::InferenceWithCache => {
                        (params[2].data().to_vec(), params[3].data().to_vec(), None)
                    }
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
                let mut normalized = vec![0.0; x.len()];
                let mut out = vec![0.0; x.len()];
                for s in 0..batch {
                    for c in 0..channels {
                        let off = (s * channels + c) * spatial;
                        for i in off..off + spatial {
                            normalized[i] = (x[i] - mean[c]) * inv_std[c];
                            out[i] = gamma[c] * normalized[i] + beta[c];
                        }
                    }
                }
                let cache = Cache::Norm {
                    normalized: tensor(input.shape().to_vec(), normalized),
                    inv_std,
                    batch_stats: mode == Mode::Training,
                };
                (tensor(shape, out), cache, stats)
            }
        }
    }

    /// Propagates a batch of cotangents `grad_out` (shape `[m, ...out_shape]`)
    /// back to the layer input. Parameter gradients are accumulated into
    /// `param_grads` when given; that requires the cotangent batch to match the
    /// cached forward batch.
    pub(crate) fn backward(
        &self,
        params: &[&Tensor],
        cache: &Cache,
        in_shape: &[usize],
        out_shape: &[usize],
        grad_out: &Tensor,
        param_grads: Option<&mut [Tensor]>,
    ) -> Tensor {
        let m = grad_out.shape()[0];
        let mut shape = vec![m];
        shape.extend_from_slice(in_shape);
        let g = grad_out.data();
        match *self {
            Layer::Dense { inputs, outputs } => {
                let w = params[0].data();
                let mut dx = vec![0.0; m * inputs];
                matmul_acc(g, w, &mut dx, m, outputs, inputs);
                if let Some(grads) = param_grads {
                    let Cache::Input(x) = cache else {
                        unreachable!("dense parameter gradients need a training cache")
                    };
                    let (dw, rest) = grads.split_at_mut(1);
                    matmul_at_b_acc(g, x.data(), dw[0].data_mut(), m, outputs, inputs);
                    let db = rest[0].data_mut();
                    for row in g.chunks(outputs) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
                tensor(shape, dx)
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeometry::new(in_shape, out_shape, kernel, stride, padding);
                let w = params[0].data();
                let k_len = in_channels * kernel * kernel;
                let hw = geom.out_h * geom.out_w;
                let in_len = geom.in_len();
                let mut dx = vec![0.0; m * in_len];
                let mut dcols = vec![0.0; k_len * hw];
                for s in 0..m {
                    let gs = &g[s * out_channels * hw..(s + 1) * out_channels * hw];
                    dcols.fill(0.0);
                    matmul_at_b_acc(w, gs, &mut dcols, out_channels, k_len, hw);
                    geom.col2im(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                }
                if let Some(grads) = param_grads {
                    let Cache::Conv { cols } = cache else {
                        unreachable!("conv parameter gradients need a training cache")
                    };
                    let (dw, rest) = grads.split_at_mut(1);
                    for s in 0..m {
                        let gs = &g[s * out_channels * hw..(s + 1) * out_channels * hw];
                        let cs = &cols[s * k_len * hw..(s + 1) * k_len * hw];
                        matmul_a_bt_acc(gs, cs, dw[0].data_mut(), out_channels, hw, k_len);
                    }
                    let db = rest[0].data_mut();
                    for s in 0..m {
                        for (c, d) in db.iter_mut().enumerate() {
                            let off = (s * out_channels + c) * hw;
                            *d += g[off..off + hw].iter().sum::<f64>();
                        }
                    }
                }
                tensor(shape, dx)
            }
            Layer::Rectifier | Layer::Softplus { .. } => {
                let Cache::Input(x) = cache else {
                    unreachable!("activation caches its input")
                };
                let xd = x.data();
                let per = xd.len() / x.shape()[0];
                let deriv = |z: f64| match *self {
                    Layer::Rectifier => {
                        if z > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Layer::Softplus { beta } => sigmoid(beta * z),
                    _ => unreachable!(),
                };
                let broadcast = x.shape()[0] == 1;
                let dx = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let z = if broadcast { xd[i % per] } else { xd[i] };
                        v * deriv(z)
                    })
                    .collect();
                tensor(shape, dx)
            }
            Layer::Flatten => tensor(shape, g.to_vec()),
            Layer::BatchNorm { channels } => {
                let Cache::Norm {
                    normalized,
                    inv_std,
                    batch_stats,
                } = cache
                else {
                    unreachable!("batchnorm caches normalized input")
                };
                let gamma = params[0].data();
                let spatial: usize = in_shape[1..].iter().product();
                let xh = normalized.data();
                let per = channels * spatial;
                let broadcast = normalized.shape()[0] == 1;
                let mut dx = vec![0.0; g.len()];
                if *batch_stats {
                    let n = (m * spatial) as f64;
                    let mut sum_d = vec![0.0; channels];
                    let mut sum_dx = vec![0.0; channels];
                    for s in 0..m {
                        for c in 0..channels {
                            let off = s * per + c * spatial;
                            for i in off..off + spatial {
                                let d = g[i] * gamma[c];
                                sum_d[c] += d;
                                sum_dx[c] += d * xh[i];
                            }
                        }
                    }
                    for s in 0..m {
                        for c in 0..channels {
                            let off = s * per + c * spatial;
                            for i in off..off + spatial {
                                let d = g[i] * gamma[c];
                                dx[i] = inv_std[c] / n * (n * d - sum_d[c] - xh[i] * sum_dx[c]);
                            }
                        }
                    }
                } else {
                    for s in 0..m {
                        for c in 0..channels {
                            let off = s * per + c * spatial;
                            for i in off..off + spatial {
                                dx[i] = g[i] * gamma[c] * inv_std[c];
                            }
                        }
                    }
                }
                if let Some(grads) = param_grads {
                    let (dgamma, rest) = grads.split_at_mut(1);
                    let dgamma = dgamma[0].data_mut();
                    let dbeta = rest[0].data_mut();
                    for s in 0..m {
                        for c in 0..channels {
                            let off = s * per + c * spatial;
                            for i in off..off + spatial {
                                let xi = if broadcast { xh[i % per] } else { xh[i] };
                                dgamma[c] += g[i] * xi;
                                dbeta[c] += g[i];
                            }
                        }
                    }
                }
                tensor(shape, dx)
            }
        }
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("layer kernels produce consistent shapes")
}

/// `ln(1 + exp(beta·z)) / beta`, evaluated without overflow.
pub fn softplus(z: f64, beta: f64) -> f64 {
    let t = beta * z;
    if t > 30.0 {
        z + (-t).exp().ln_1p() / beta
    } else {
        t.exp().ln_1p() / beta
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

struct ConvGeometry {
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(in_shape: &[usize], out_shape: &[usize], kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            channels: in_shape[0],
            in_h: in_shape[1],
            in_w: in_shape[2],
            out_h: out_shape[1],
            out_w: out_shape[2],
            kernel,
            stride,
            padding,
        }
    }

    fn in_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    /// Source pixel for kernel offset `k` at output coordinate `o`, if inside.
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.out_h * self.out_w;
        let kk = self.kernel * self.kernel;
        for c in 0..self.channels {
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let row = c * kk + ki * self.kernel + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.out_h {
                        let sy = self.source(oy, ki, self.in_h);
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] = match (sy, self.source(ox, kj, self.in_w)) {
                                (Some(y), Some(xx)) => x[(c * self.in_h + y) * self.in_w + xx],
                                _ => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let hw = self.out_h * self.out_w;
        let kk = self.kernel * self.kernel;
        for c in 0..self.channels {
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let row = c * kk + ki * self.kernel + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.out_h {
                        let Some(y) = self.source(oy, ki, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(xx) = self.source(ox, kj, self.in_w) {
                                dx[(c * self.in_h + y) * self.in_w + xx] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shapes() {
        let conv = Layer::Conv2d {
            in_channels: 1,
            out_channels: 16,
            kernel: 5,
            stride: 2,
            padding: 2,
        };
        assert_eq!(conv.output_shape(&[1, 28, 28]), Some(vec![16, 14, 14]));
        assert_eq!(conv.output_shape(&[2, 28, 28]), None);
        assert_eq!(Layer::Flatten.output_shape(&[2, 3, 4]), Some(vec![24]));
    }

    #[test]
    fn softplus_is_stable_and_close_to_rectifier() {
        assert!(softplus(1e4, 10.0).is_finite());
        assert_eq!(softplus(-1e4, 10.0), 0.0);
        for i in -100..=100 {
            let z = i as f64 * 0.1;
            assert!((softplus(z, 100.0) - z.max(0.0)).abs() <= std::f64::consts::LN_2 / 100.0 + 1e-15);
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let layer = Layer::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let in_shape = [2, 5, 4];
        let out_shape = layer.output_shape(&in_shape).unwrap();
        let w = Tensor::new(vec![3, 2, 3, 3], (0..54).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let b = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
        let x = Tensor::new(vec![1, 2, 5, 4], (0..40).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let (y, _, _) = layer.forward(&[&w, &b], &x, &in_shape, &out_shape, Mode::Inference);
        let (oh, ow) = (out_shape[1], out_shape[2]);
        for o in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                    continue;
                                }
                                acc += w.data()[((o * 2 + c) * 3 + ki) * 3 + kj]
                                    * x.data()[(c * 5 + iy as usize) * 4 + ix as usize];
                            }
                        }
                    }
                    let got = y.data()[(o * oh + oy) * ow + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}
