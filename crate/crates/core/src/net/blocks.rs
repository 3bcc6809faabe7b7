//! Encoder and decoder blocks.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{elu, gelu, ChannelAffine, Conv2d, LayerNorm, Linear};
use crate::grid::ImageGrid;

/// Residual dilated 3×3 conv → norm → GELU → 1×1 conv.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: ChannelAffine,
    pub pointwise: Conv2d,
}

impl ConvBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, dilation: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, dim, dim, 3, 1, dilation),
            norm: ChannelAffine::identity(dim),
            pointwise: Conv2d::new(rng, dim, dim, 1, 1, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count() + self.pointwise.param_count()
    }

    pub fn forward(&self, x: &ImageGrid) -> ImageGrid {
        let mut y = self.conv.forward(x);
        self.norm.apply_in_place(&mut y);
        y.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let mut y = self.pointwise.forward(&y);
        for (o, i) in y.data_mut().iter_mut().zip(x.data()) {
            *o += i;
        }
        y
    }
}

/// Pre-norm multi-head self-attention over spatial tokens, then a two-layer
/// MLP, each with a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub heads: usize,
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, mlp_ratio: f64) -> Self {
        let hidden = ((dim as f64) * mlp_ratio).round().max(1.0) as usize;
        Self {
            heads,
            norm1: LayerNorm::new(dim),
            qkv: Linear::new(rng, dim, 3 * dim),
            proj: Linear::new(rng, dim, dim),
            norm2: LayerNorm::new(dim),
            fc1: Linear::new(rng, dim, hidden),
            fc2: Linear::new(rng, hidden, dim),
        }
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.qkv.param_count()
            + self.proj.param_count()
            + self.norm2.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
    }

    fn dim(&self) -> usize {
        self.proj.out_dim
    }

    /// Softmax row of one query against all keys, in `f64`.
    fn attention_row(&self, qkv: &[f32], n: usize, head: usize, query: usize) -> Vec<f64> {
        let dim = self.dim();
        let hd = dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let q = &qkv[query * 3 * dim + head * hd..][..hd];
        let mut logits: Vec<f64> = (0..n)
            .map(|j| {
                let k = &qkv[j * 3 * dim + dim + head * hd..][..hd];
                let dot: f32 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                dot as f64 * scale
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        logits.iter_mut().for_each(|l| *l /= sum);
        logits
    }

    /// Attention probabilities for every head: `[head][query][key]`.
    pub fn attention_probs(&self, x: &ImageGrid) -> Vec<Vec<Vec<f64>>> {
        let n = x.pixel_count();
        let qkv = self.qkv.forward(&self.norm1.forward(x.data()));
        (0..self.heads)
            .map(|h| (0..n).map(|q| self.attention_row(&qkv, n, h, q)).collect())
            .collect()
    }

    pub fn forward(&self, x: &ImageGrid) -> ImageGrid {
        let dim = self.dim();
        let n = x.pixel_count();
        let hd = dim / self.heads;
        let qkv = self.qkv.forward(&self.norm1.forward(x.data()));
        let mut attended = vec![0f32; n * dim];
        attended
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(q, out)| {
                for h in 0..self.heads {
                    let probs = self.attention_row(&qkv, n, h, q);
                    let mut acc = vec![0f64; hd];
                    for (j, p) in probs.iter().enumerate() {
                        let v = &qkv[j * 3 * dim + 2 * dim + h * hd..][..hd];
                        for (a, vv) in acc.iter_mut().zip(v) {
                            *a += p * *vv as f64;
                        }
                    }
                    for (o, a) in out[h * hd..(h + 1) * hd].iter_mut().zip(acc) {
                        *o = a as f32;
                    }
                }
            });
        let mut tokens = self.proj.forward(&attended);
        for (t, i) in tokens.iter_mut().zip(x.data()) {
            *t += i;
        }
        let mut hidden = self.fc1.forward(&self.norm2.forward(&tokens));
        hidden.iter_mut().for_each(|v| *v = gelu(*v));
        let mlp = self.fc2.forward(&hidden);
        for (t, m) in tokens.iter_mut().zip(mlp) {
            *t += m;
        }
        ImageGrid::from_raw(x.height(), x.width(), dim, tokens)
    }
}

/// Decoder 3×3 conv followed by ELU.
#[derive(Clone, Debug, PartialEq)]
pub struct UpConv {
    pub conv: Conv2d,
}

impl UpConv {
    pub fn new(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, in_ch, out_ch, 3, 1, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    pub fn forward(&self, x: &ImageGrid) -> ImageGrid {
        let mut y = self.conv.forward(x);
        y.data_mut().iter_mut().for_each(|v| *v = elu(*v));
        y
    }
}

/// Strided conv → norm → GELU, used by the stem and stage transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormAct {
    pub conv: Conv2d,
    pub norm: ChannelAffine,
}

impl ConvNormAct {
    pub fn new(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, in_ch, out_ch, 3, stride, 1),
            norm: ChannelAffine::identity(out_ch),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }

    pub fn forward(&self, x: &ImageGrid) -> ImageGrid {
        let mut y = self.conv.forward(x);
        self.norm.apply_in_place(&mut y);
        y.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        y
    }
}
