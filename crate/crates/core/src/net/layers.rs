//! Inference-only building blocks over HWC feature grids.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::grid::ImageGrid;

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Sigmoid kept strictly inside `(0, 1)` in `f32`.
pub fn sigmoid(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-(x as f64)).exp());
    (s as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

/// 2-D convolution with zero "same" padding `dilation·(k−1)/2`.
/// Weights are laid out `[out][ky][kx][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f32).sqrt();
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            dilation,
            weight: uniform(rng, out_ch * fan_in, bound),
            bias: uniform(rng, out_ch, bound),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward(&self, x: &ImageGrid) -> ImageGrid {
        assert_eq!(x.channels(), self.in_ch, "conv input channels");
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.output_size(h, w);
        let pad = (self.dilation * (self.kernel - 1) / 2) as isize;
        let k = self.kernel;
        let cin = self.in_ch;
        let src = x.data();
        let mut out = vec![0f32; oh * ow * self.out_ch];
        out.par_chunks_mut(ow * self.out_ch)
            .enumerate()
            .for_each(|(oy, row)| {
                for ox in 0..ow {
                    let acc = &mut row[ox * self.out_ch..(ox + 1) * self.out_ch];
                    acc.copy_from_slice(&self.bias);
                    for ky in 0..k {
                        let iy = (oy * self.stride) as isize + (ky * self.dilation) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix =
                                (ox * self.stride) as isize + (kx * self.dilation) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let base = (iy as usize * w + ix as usize) * cin;
                            let input = &src[base..base + cin];
                            for (o, a) in acc.iter_mut().enumerate() {
                                let wo = ((o * k + ky) * k + kx) * cin;
                                let wt = &self.weight[wo..wo + cin];
                                let mut s = 0f32;
                                for c in 0..cin {
                                    s += wt[c] * input[c];
                                }
                                *a += s;
                            }
                        }
                    }
                }
            });
        ImageGrid::from_raw(oh, ow, self.out_ch, out)
    }
}

/// Per-channel scale and shift: batch normalization folded for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl ChannelAffine {
    pub fn identity(ch: usize) -> Self {
        Self {
            scale: vec![1.0; ch],
            shift: vec![0.0; ch],
        }
    }

    pub fn param_count(&self) -> usize {
        self.scale.len() + self.shift.len()
    }

    pub fn apply_in_place(&self, x: &mut ImageGrid) {
        let c = self.scale.len();
        for px in x.data_mut().chunks_exact_mut(c) {
            for i in 0..c {
                px[i] = px[i] * self.scale[i] + self.shift[i];
            }
        }
    }
}

/// Normalization over the channel vector of each token.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps: 1e-5,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn forward(&self, tokens: &[f32]) -> Vec<f32> {
        let d = self.gamma.len();
        let mut out = vec![0f32; tokens.len()];
        out.par_chunks_mut(d)
            .zip(tokens.par_chunks(d))
            .for_each(|(o, t)| {
                let mean = t.iter().sum::<f32>() / d as f32;
                let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
                let inv = 1.0 / (var + self.eps).sqrt();
                for i in 0..d {
                    o[i] = (t[i] - mean) * inv * self.gamma[i] + self.beta[i];
                }
            });
        out
    }
}

/// Fully connected layer applied per token; weights `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: uniform(rng, in_dim * out_dim, bound),
            bias: uniform(rng, out_dim, bound),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, tokens: &[f32]) -> Vec<f32> {
        let n = tokens.len() / self.in_dim;
        let mut out = vec![0f32; n * self.out_dim];
        out.par_chunks_mut(self.out_dim)
            .zip(tokens.par_chunks(self.in_dim))
            .for_each(|(o, t)| {
                for (j, oj) in o.iter_mut().enumerate() {
                    let w = &self.weight[j * self.in_dim..(j + 1) * self.in_dim];
                    let mut s = self.bias[j];
                    for i in 0..self.in_dim {
                        s += w[i] * t[i];
                    }
                    *oj = s;
                }
            });
        out
    }
}

/// Concatenates two grids of equal spatial size along channels.
pub fn concat_channels(a: &ImageGrid, b: &ImageGrid) -> ImageGrid {
    assert!(a.same_size(b), "concat spatial mismatch");
    let (ca, cb) = (a.channels(), b.channels());
    let mut data = Vec::with_capacity(a.pixel_count() * (ca + cb));
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    ImageGrid::from_raw(a.height(), a.width(), ca + cb, data)
}
