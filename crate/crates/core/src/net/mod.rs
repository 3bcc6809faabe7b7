//! Desk-scale hybrid CNN/transformer encoder-decoder for depth and normals.
//!
//! Inference only, with seeded random weights. The encoder normalizes the
//! input, builds an average-pooled input pyramid (1/2 … 1/16), runs a
//! stride-4 stem and three stages of dilated conv blocks followed by
//! transformer blocks, and emits features at strides 4, 8 and 16. The
//! decoder walks the pyramid back up with skip connections and, at each
//! requested scale, emits a sigmoid disparity map and a unit normal map.

pub mod blocks;
pub mod layers;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use self::blocks::{ConvBlock, ConvNormAct, TransformerBlock, UpConv};
use self::layers::{concat_channels, sigmoid, Conv2d};
use crate::calculus::{avg_pool, normalize_normals, upsample_nearest};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const STAGES: usize = 3;
/// Total downsampling of the deepest feature map.
pub const MAX_STRIDE: usize = 16;

/// `(k − 1)·d + 1`: the input span of one dilated kernel.
pub fn receptive_field(kernel: usize, dilation: usize) -> Result<usize> {
    if kernel < 1 || dilation < 1 {
        return Err(Error::Parameter(format!(
            "kernel and dilation must be >= 1, got ({kernel}, {dilation})"
        )));
    }
    Ok((kernel - 1) * dilation + 1)
}

/// Measures the receptive field of a single seeded `kernel × kernel`
/// convolution with the given dilation by pushing an impulse through it and
/// returning the widest extent of nonzero responses.
pub fn probe_receptive_field(kernel: usize, dilation: usize, seed: u64) -> Result<usize> {
    receptive_field(kernel, dilation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Conv2d::new(&mut rng, 1, 1, kernel, 1, dilation);
    conv.bias.iter_mut().for_each(|b| *b = 0.0);
    let side = 4 * kernel * dilation + 1;
    let mut impulse = ImageGrid::zeros(side, side, 1);
    impulse.set(side / 2, side / 2, 0, 1.0);
    let out = conv.forward(&impulse);
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..side {
        for x in 0..side {
            if out.get(y, x, 0) != 0.0 {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    if y0 == usize::MAX {
        return Ok(0);
    }
    Ok((y1 - y0 + 1).max(x1 - x0 + 1))
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub dims: [usize; STAGES],
    pub depth: [usize; STAGES],
    pub transformer_blocks: [usize; STAGES],
    /// Dilation of each conv block, per stage.
    pub dilations: [Vec<usize>; STAGES],
    pub decoder_channels: [usize; STAGES],
    pub scales: Vec<usize>,
    /// Attention heads per stage.
    pub heads: [usize; STAGES],
    pub mlp_ratio: f64,
    pub eps: f32,
    pub input_mean: [f32; 3],
    pub input_std: [f32; 3],
    pub use_skips: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            dims: [32, 64, 128],
            depth: [3, 3, 6],
            transformer_blocks: [1, 1, 2],
            dilations: [vec![1, 2], vec![1, 2], vec![1, 2, 3, 1]],
            decoder_channels: [16, 32, 64],
            scales: vec![0, 1, 2],
            heads: [1, 2, 4],
            mlp_ratio: 4.0,
            eps: 1e-7,
            input_mean: [0.485, 0.456, 0.406],
            input_std: [0.229, 0.224, 0.225],
            use_skips: true,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("net config {key}: bad value {s:?}")))
        })
        .collect()
}

fn parse_array<T: std::str::FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let list = parse_list::<T>(key, v)?;
    list.try_into()
        .map_err(|_| Error::Format(format!("net config {key}: expected {N} values")))
}

impl NetConfig {
    /// Parses `key = value` lines over the defaults. Lists are
    /// comma-separated; `dilations` separates stages with `;`, e.g.
    /// `dilations = 1,2; 1,2; 1,2,3,1`. `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut heads_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "net config line {}: expected key = value",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dims" => cfg.dims = parse_array(key, value)?,
                "depth" => cfg.depth = parse_array(key, value)?,
                "transformer_blocks" => cfg.transformer_blocks = parse_array(key, value)?,
                "dilations" => {
                    let stages: Vec<&str> = value.split(';').collect();
                    if stages.len() != STAGES {
                        return Err(Error::Format(format!(
                            "net config dilations: expected {STAGES} ';'-separated stages"
                        )));
                    }
                    for (i, s) in stages.iter().enumerate() {
                        cfg.dilations[i] = if s.trim().is_empty() {
                            vec![]
                        } else {
                            parse_list(key, s)?
                        };
                    }
                }
                "decoder_channels" => cfg.decoder_channels = parse_array(key, value)?,
                "scales" => cfg.scales = parse_list(key, value)?,
                "heads" => {
                    cfg.heads = parse_array(key, value)?;
                    heads_set = true;
                }
                "mlp_ratio" => cfg.mlp_ratio = parse_list::<f64>(key, value)?[0],
                "eps" => cfg.eps = parse_list::<f32>(key, value)?[0],
                "input_mean" => cfg.input_mean = parse_array(key, value)?,
                "input_std" => cfg.input_std = parse_array(key, value)?,
                "use_skips" => {
                    cfg.use_skips = value.parse().map_err(|_| {
                        Error::Format(format!("net config use_skips: bad bool {value:?}"))
                    })?
                }
                other => {
                    return Err(Error::Format(format!(
                        "net config line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if !heads_set {
            cfg.heads = cfg.dims.map(|d| (d / 32).max(1));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(format!("net config: {m}")));
        for i in 0..STAGES {
            if self.dims[i] == 0 || self.decoder_channels[i] == 0 {
                return bad(format!("stage {i} has zero channels"));
            }
            if self.transformer_blocks[i] > self.depth[i] {
                return bad(format!("stage {i}: more transformer blocks than depth"));
            }
            if self.dilations[i].len() != self.depth[i] - self.transformer_blocks[i] {
                return bad(format!(
                    "stage {i}: {} dilations for {} conv blocks",
                    self.dilations[i].len(),
                    self.depth[i] - self.transformer_blocks[i]
                ));
            }
            if self.dilations[i].contains(&0) {
                return bad(format!("stage {i}: dilation must be >= 1"));
            }
            if self.heads[i] == 0 || !self.dims[i].is_multiple_of(self.heads[i]) {
                return bad(format!(
                    "stage {i}: {} heads do not divide {}",
                    self.heads[i], self.dims[i]
                ));
            }
        }
        if self.scales.iter().any(|&s| s >= STAGES) {
            return bad("scales must lie in {0, 1, 2}".into());
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return bad("input_std must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) || !(self.eps >= 0.0) {
            return bad("mlp_ratio must be positive and eps nonnegative".into());
        }
        Ok(())
    }
}

/// One encoder block, chosen per position in a stage.
#[derive(Clone, Debug, PartialEq)]
pub enum StageBlock {
    Conv(ConvBlock),
    Transformer(TransformerBlock),
}

impl StageBlock {
    fn forward(&self, x: &ImageGrid) -> ImageGrid {
        match self {
            StageBlock::Conv(b) => b.forward(x),
            StageBlock::Transformer(b) => b.forward(x),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            StageBlock::Conv(b) => b.param_count(),
            StageBlock::Transformer(b) => b.param_count(),
        }
    }
}

/// Decoder layers for one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLevel {
    pub upconv_in: UpConv,
    pub upconv_out: UpConv,
    pub disp_head: Conv2d,
    pub normal_head: Conv2d,
}

/// All parameters, fully determined by `(config, seed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub stem: [ConvNormAct; 4],
    pub stages: [Vec<StageBlock>; STAGES],
    /// Stride-2 transitions into stages 1 and 2.
    pub transitions: [ConvNormAct; STAGES - 1],
    pub decoder: [DecoderLevel; STAGES],
}

impl NetWeights {
    pub fn seeded(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.dims;
        let stem = [
            ConvNormAct::new(&mut rng, 3, d[0], 2),
            ConvNormAct::new(&mut rng, d[0], d[0], 1),
            ConvNormAct::new(&mut rng, d[0], d[0], 1),
            ConvNormAct::new(&mut rng, d[0] + 3, d[0], 2),
        ];
        let mut stages: [Vec<StageBlock>; STAGES] = Default::default();
        for (i, stage) in stages.iter_mut().enumerate() {
            let conv_blocks = cfg.depth[i] - cfg.transformer_blocks[i];
            for j in 0..cfg.depth[i] {
                stage.push(if j >= conv_blocks {
                    StageBlock::Transformer(TransformerBlock::new(
                        &mut rng,
                        d[i],
                        cfg.heads[i],
                        cfg.mlp_ratio,
                    ))
                } else {
                    StageBlock::Conv(ConvBlock::new(&mut rng, d[i], cfg.dilations[i][j]))
                });
            }
        }
        let transitions = [
            ConvNormAct::new(&mut rng, d[0] + 3, d[1], 2),
            ConvNormAct::new(&mut rng, d[1] + 3, d[2], 2),
        ];
        let dec = cfg.decoder_channels;
        let level = |rng: &mut ChaCha8Rng, i: usize| {
            let below = if i == STAGES - 1 {
                d[STAGES - 1]
            } else {
                dec[i + 1]
            };
            let skip = if cfg.use_skips && i > 0 { d[i - 1] } else { 0 };
            DecoderLevel {
                upconv_in: UpConv::new(rng, below, dec[i]),
                upconv_out: UpConv::new(rng, dec[i] + skip, dec[i]),
                disp_head: Conv2d::new(rng, dec[i], 1, 3, 1, 1),
                normal_head: Conv2d::new(rng, dec[i], 3, 3, 1, 1),
            }
        };
        // built deepest first, matching the decoder's traversal
        let l2 = level(&mut rng, 2);
        let l1 = level(&mut rng, 1);
        let l0 = level(&mut rng, 0);
        Ok(Self {
            stem,
            stages,
            transitions,
            decoder: [l0, l1, l2],
        })
    }

    pub fn param_count(&self) -> usize {
        self.stem.iter().map(|c| c.param_count()).sum::<usize>()
            + self
                .stages
                .iter()
                .flatten()
                .map(|b| b.param_count())
                .sum::<usize>()
            + self
                .transitions
                .iter()
                .map(|c| c.param_count())
                .sum::<usize>()
            + self
                .decoder
                .iter()
                .map(|l| {
                    l.upconv_in.param_count()
                        + l.upconv_out.param_count()
                        + l.disp_head.param_count()
                        + l.normal_head.param_count()
                })
                .sum::<usize>()
    }
}

/// Encoder features at strides 4, 8 and 16.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [ImageGrid; STAGES],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleOutput {
    /// Single channel, strictly inside `(0, 1)`.
    pub disparity: ImageGrid,
    /// Three channels, unit length.
    pub normals: ImageGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    pub features: FeaturePyramid,
    pub scales: BTreeMap<usize, ScaleOutput>,
}

/// Config plus weights, immutable after construction.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetConfig,
    pub weights: NetWeights,
}

impl Network {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let weights = NetWeights::seeded(&config, seed)?;
        Ok(Self { config, weights })
    }

    pub fn encoder_forward(&self, x: &ImageGrid) -> Result<FeaturePyramid> {
        x.require_channels(3, "network input")?;
        let (h, w) = (x.height(), x.width());
        if h == 0 || w == 0 || h % MAX_STRIDE != 0 || w % MAX_STRIDE != 0 {
            return Err(Error::Dimension(format!(
                "input {h}x{w} must be a nonzero multiple of {MAX_STRIDE} on both sides"
            )));
        }
        let cfg = &self.config;
        let wt = &self.weights;
        let mut norm = x.clone();
        for px in norm.data_mut().chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] - cfg.input_mean[c]) / cfg.input_std[c];
            }
        }
        // pooled inputs at 1/2, 1/4, 1/8, 1/16; the last is not consumed
        let pooled: Vec<ImageGrid> = (1..=4)
            .map(|i| avg_pool(&norm, 1 << i))
            .collect::<Result<_>>()?;

        let mut y = wt.stem[0].forward(&norm);
        y = wt.stem[1].forward(&y);
        y = wt.stem[2].forward(&y);
        y = wt.stem[3].forward(&concat_channels(&y, &pooled[0]));

        let mut levels = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            for block in &wt.stages[i] {
                y = block.forward(&y);
            }
            levels.push(y.clone());
            if i + 1 < STAGES {
                y = wt.transitions[i].forward(&concat_channels(&y, &pooled[i + 1]));
            }
        }
        Ok(FeaturePyramid {
            levels: levels.try_into().expect("three stages"),
        })
    }

    pub fn decoder_forward(&self, f: &FeaturePyramid) -> Result<BTreeMap<usize, ScaleOutput>> {
        let cfg = &self.config;
        for (i, level) in f.levels.iter().enumerate() {
            if level.channels() != cfg.dims[i] {
                return Err(Error::Dimension(format!(
                    "feature level {i} has {} channels, config expects {}",
                    level.channels(),
                    cfg.dims[i]
                )));
            }
            if i > 0 {
                let prev = &f.levels[i - 1];
                if prev.height() != 2 * level.height() || prev.width() != 2 * level.width() {
                    return Err(Error::Dimension(format!(
                        "feature level {i} is not half the size of level {}",
                        i - 1
                    )));
                }
            }
        }
        let mut outputs = BTreeMap::new();
        let mut x = f.levels[STAGES - 1].clone();
        for i in (0..STAGES).rev() {
            let level = &self.weights.decoder[i];
            x = upsample_nearest(&level.upconv_in.forward(&x), 2);
            if cfg.use_skips && i > 0 {
                x = concat_channels(&x, &f.levels[i - 1]);
            }
            x = level.upconv_out.forward(&x);
            if cfg.scales.contains(&i) {
                let disparity = upsample_nearest(&level.disp_head.forward(&x), 2).map(sigmoid);
                let raw = upsample_nearest(&level.normal_head.forward(&x), 2);
                let normals = normalize_normals(&raw, cfg.eps)?;
                outputs.insert(i, ScaleOutput { disparity, normals });
            }
        }
        Ok(outputs)
    }

    pub fn forward(&self, x: &ImageGrid) -> Result<NetOutput> {
        let features = self.encoder_forward(x)?;
        let scales = self.decoder_forward(&features)?;
        Ok(NetOutput { features, scales })
    }

    /// [`Network::forward`] on a dedicated pool of `workers` threads.
    pub fn forward_with_workers(&self, x: &ImageGrid, workers: usize) -> Result<NetOutput> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
        pool.install(|| self.forward(x))
    }
}
