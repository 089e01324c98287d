//! GLANCE spatial encoder.
//!
//! A small residual backbone extracts local features, three dilated 3x3
//! convolutions extract progressively more global ones, and the four maps
//! are stacked along channels. Centrosymmetric fusion then runs two mirrored
//! paths over the stack:
//!
//! * top: global average pooling + depth-wise convolution, then a channel
//!   hourglass (squeeze, ReLU, expand);
//! * bottom: the same hourglass applied at every spatial location, then
//!   pooling + depth-wise convolution.
//!
//! Each path yields `fused_dim / 2` values and the frame feature is their
//! concatenation. Two reduced variants exist for ablations: `ResnetOnly`
//! (backbone, pooled, linear projection) and `Extractor` (backbone + stages,
//! pooled, linear projection). All variants draw backbone weights first from
//! the same stream, so one seed gives identical backbones.

use ndarray::{concatenate, s, Array1, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::norm::BnCache;
use crate::nn::{
    concat_channels, global_avg_pool, global_avg_pool_backward, join, nchw_to_rows, relu2,
    relu2_backward, relu4, relu4_backward, rows_to_nchw, BatchNorm2d, Conv2d, Linear, Module,
    Param, ReluCache,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    ResnetOnly,
    Extractor,
    Full,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 3] = [
        EncoderVariant::ResnetOnly,
        EncoderVariant::Extractor,
        EncoderVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::ResnetOnly => "resnet_only",
            EncoderVariant::Extractor => "extractor",
            EncoderVariant::Full => "full",
        }
    }

    /// (ResNet, Extractor, Fusion) module flags.
    pub fn modules(self) -> (bool, bool, bool) {
        match self {
            EncoderVariant::ResnetOnly => (true, false, false),
            EncoderVariant::Extractor => (true, true, false),
            EncoderVariant::Full => (true, true, true),
        }
    }
}

/// Which fusion paths contribute; a disabled path outputs zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionPaths {
    Both,
    TopOnly,
    BottomOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub backbone_channels: usize,
    /// Residual blocks after the stem; the first one halves resolution.
    pub backbone_blocks: usize,
    pub stage_channels: [usize; 3],
    pub dilation_rates: [usize; 3],
    pub fused_dim: usize,
    pub hourglass_bottleneck_ratio: f64,
    pub input_size: (usize, usize),
    pub variant: EncoderVariant,
    pub fusion_paths: FusionPaths,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_channels: 1,
            backbone_channels: 64,
            backbone_blocks: 3,
            stage_channels: [64; 3],
            dilation_rates: [1, 2, 4],
            fused_dim: 256,
            hourglass_bottleneck_ratio: 0.25,
            input_size: (64, 64),
            variant: EncoderVariant::Full,
            fusion_paths: FusionPaths::Both,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.dilation_rates;
        if !(d[0] >= 1 && d[0] < d[1] && d[1] < d[2]) {
            return Err(Error::Config(format!(
                "dilation rates must be positive and strictly increasing, got {d:?}"
            )));
        }
        if self.fused_dim == 0 || self.fused_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "fused_dim must be positive and even, got {}",
                self.fused_dim
            )));
        }
        let r = self.hourglass_bottleneck_ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("hourglass ratio {r} outside (0, 1]")));
        }
        if self.backbone_blocks == 0 {
            return Err(Error::Config("backbone needs at least one residual block".into()));
        }
        if self.input_channels == 0
            || self.backbone_channels == 0
            || self.stage_channels.iter().any(|c| *c == 0)
        {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let (h, w) = self.input_size;
        if h < 4 || w < 4 {
            return Err(Error::Config(format!("input size {h}x{w} too small")));
        }
        Ok(())
    }

    pub fn stacked_channels(&self) -> usize {
        self.backbone_channels + self.stage_channels.iter().sum::<usize>()
    }

    pub fn feature_size(&self) -> (usize, usize) {
        let half = |x: usize| (x - 1) / 2 + 1;
        (half(half(self.input_size.0)), half(half(self.input_size.1)))
    }

    pub fn bottleneck(&self, channels: usize) -> usize {
        ((channels as f64 * self.hourglass_bottleneck_ratio).round() as usize).max(1)
    }
}

/// Theoretical receptive field (input pixels) of the backbone output and of
/// each dilated stage, by the usual recursion `r += (k - 1) * d * jump`.
pub fn receptive_fields(config: &EncoderConfig) -> Vec<usize> {
    let mut r = 1usize;
    let mut jump = 1usize;
    let mut conv = |k: usize, stride: usize, dil: usize, r: &mut usize| {
        *r += (k - 1) * dil * jump;
        jump *= stride;
    };
    conv(3, 2, 1, &mut r); // stem
    conv(3, 2, 1, &mut r); // block 1
    conv(3, 1, 1, &mut r);
    for _ in 1..config.backbone_blocks {
        conv(3, 1, 1, &mut r);
        conv(3, 1, 1, &mut r);
    }
    let mut out = vec![r];
    for d in config.dilation_rates {
        conv(3, 1, d, &mut r);
        out.push(r);
    }
    out
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

#[derive(Clone, Debug)]
struct ConvBnCache {
    x: Array4<f64>,
    bn: BnCache,
}

impl ConvBn {
    fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Self {
        ConvBn {
            conv: Conv2d::new(rng, cin, cout, k, stride, pad, dil, false),
            bn: BatchNorm2d::new(cout),
        }
    }

    fn forward(&self, x: &Array4<f64>, train: bool) -> (Array4<f64>, ConvBnCache) {
        let y = self.conv.forward(x);
        let (z, bn) = self.bn.forward(&y, train);
        (z, ConvBnCache { x: x.clone(), bn })
    }

    fn backward(&mut self, cache: &ConvBnCache, dz: &Array4<f64>) -> Array4<f64> {
        let dy = self.bn.backward(&cache.bn, dz);
        self.conv.backward(&cache.x, &dy)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    first: ConvBn,
    second: ConvBn,
    shortcut: Option<ConvBn>,
}

#[derive(Clone, Debug)]
struct ResBlockCache {
    first: ConvBnCache,
    relu1: ReluCache,
    second: ConvBnCache,
    shortcut: Option<ConvBnCache>,
    relu_out: ReluCache,
}

impl ResBlock {
    fn new(rng: &mut ChaCha8Rng, channels: usize, downsample: bool) -> Self {
        let stride = if downsample { 2 } else { 1 };
        ResBlock {
            first: ConvBn::new(rng, channels, channels, 3, stride, 1, 1),
            second: ConvBn::new(rng, channels, channels, 3, 1, 1, 1),
            shortcut: downsample.then(|| ConvBn::new(rng, channels, channels, 1, 2, 0, 1)),
        }
    }

    fn forward(&self, x: &Array4<f64>, train: bool) -> (Array4<f64>, ResBlockCache) {
        let (a, first) = self.first.forward(x, train);
        let (a, relu1) = relu4(a);
        let (b, second) = self.second.forward(&a, train);
        let (skip, shortcut) = match &self.shortcut {
            Some(sc) => {
                let (s, c) = sc.forward(x, train);
                (s, Some(c))
            }
            None => (x.clone(), None),
        };
        let (out, relu_out) = relu4(b + skip);
        (
            out,
            ResBlockCache {
                first,
                relu1,
                second,
                shortcut,
                relu_out,
            },
        )
    }

    fn backward(&mut self, cache: &ResBlockCache, dy: &Array4<f64>) -> Array4<f64> {
        let d_sum = relu4_backward(&cache.relu_out, dy.clone());
        let da = self.second.backward(&cache.second, &d_sum);
        let da = relu4_backward(&cache.relu1, da);
        let mut dx = self.first.backward(&cache.first, &da);
        match (&mut self.shortcut, &cache.shortcut) {
            (Some(sc), Some(c)) => dx += &sc.backward(c, &d_sum),
            _ => dx += &d_sum,
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.first.visit(&join(prefix, "conv1"), f);
        self.second.visit(&join(prefix, "conv2"), f);
        if let Some(sc) = &self.shortcut {
            sc.visit(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.first.visit_mut(&join(prefix, "conv1"), f);
        self.second.visit_mut(&join(prefix, "conv2"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}

/// Local-feature residual network: stride-2 stem then residual blocks.
#[derive(Clone, Debug)]
pub struct Backbone {
    stem: ConvBn,
    blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    stem: ConvBnCache,
    stem_relu: ReluCache,
    blocks: Vec<ResBlockCache>,
}

impl Backbone {
    fn new(rng: &mut ChaCha8Rng, config: &EncoderConfig) -> Self {
        let c = config.backbone_channels;
        Backbone {
            stem: ConvBn::new(rng, config.input_channels, c, 3, 2, 1, 1),
            blocks: (0..config.backbone_blocks)
                .map(|i| ResBlock::new(rng, c, i == 0))
                .collect(),
        }
    }

    pub fn forward(&self, x: &Array4<f64>, train: bool) -> (Array4<f64>, BackboneCache) {
        let (y, stem) = self.stem.forward(x, train);
        let (mut y, stem_relu) = relu4(y);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (z, c) = b.forward(&y, train);
            blocks.push(c);
            y = z;
        }
        (
            y,
            BackboneCache {
                stem,
                stem_relu,
                blocks,
            },
        )
    }

    pub fn backward(&mut self, cache: &BackboneCache, dy: &Array4<f64>) -> Array4<f64> {
        let mut g = dy.clone();
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g);
        }
        let g = relu4_backward(&cache.stem_relu, g);
        self.stem.backward(&cache.stem, &g)
    }
}

impl Module for Backbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{}", i + 1)), f);
        }
    }
}

/// The three dilated convolutions.
#[derive(Clone, Debug)]
pub struct Stages {
    stages: Vec<ConvBn>,
}

#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// Backbone output followed by the three stage outputs.
    pub maps: Vec<Array4<f64>>,
    pub stacked: Array4<f64>,
}

#[derive(Clone, Debug)]
pub struct StagesCache {
    convs: Vec<ConvBnCache>,
    relus: Vec<ReluCache>,
    channels: Vec<usize>,
}

impl Stages {
    fn new(rng: &mut ChaCha8Rng, config: &EncoderConfig) -> Self {
        let mut cin = config.backbone_channels;
        let mut stages = Vec::with_capacity(3);
        for (c, d) in config.stage_channels.iter().zip(config.dilation_rates) {
            stages.push(ConvBn::new(rng, cin, *c, 3, 1, d, d));
            cin = *c;
        }
        Stages { stages }
    }

    pub fn forward(&self, local: &Array4<f64>, train: bool) -> (FeaturePyramid, StagesCache) {
        let mut maps = vec![local.clone()];
        let mut convs = Vec::with_capacity(3);
        let mut relus = Vec::with_capacity(3);
        for st in &self.stages {
            let (y, c) = st.forward(maps.last().expect("non-empty"), train);
            let (y, r) = relu4(y);
            convs.push(c);
            relus.push(r);
            maps.push(y);
        }
        let channels = maps.iter().map(|m| m.dim().1).collect();
        let refs: Vec<&Array4<f64>> = maps.iter().collect();
        let stacked = concat_channels(&refs);
        (
            FeaturePyramid { maps, stacked },
            StagesCache {
                convs,
                relus,
                channels,
            },
        )
    }

    /// Gradient with respect to the backbone output, given the gradient of
    /// the stacked map.
    pub fn backward(&mut self, cache: &StagesCache, d_stacked: &Array4<f64>) -> Array4<f64> {
        let mut offsets = vec![0];
        for c in &cache.channels {
            offsets.push(offsets.last().unwrap() + c);
        }
        let part = |i: usize| d_stacked.slice(s![.., offsets[i]..offsets[i + 1], .., ..]).to_owned();
        let mut g = part(3);
        for k in (0..3).rev() {
            let gz = relu4_backward(&cache.relus[k], g);
            let gin = self.stages[k].backward(&cache.convs[k], &gz);
            g = gin + part(k);
        }
        g
    }
}

impl Module for Stages {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, st) in self.stages.iter().enumerate() {
            st.visit(&join(prefix, &format!("{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, st) in self.stages.iter_mut().enumerate() {
            st.visit_mut(&join(prefix, &format!("{}", i + 1)), f);
        }
    }
}

/// Global average pooling followed by a depth-wise convolution on the
/// pooled 1x1 map, i.e. a per-channel scale and bias.
#[derive(Clone, Debug)]
pub struct PoolDepthwise {
    pub scale: Param,
    pub bias: Param,
}

impl PoolDepthwise {
    fn new(channels: usize) -> Self {
        PoolDepthwise {
            scale: Param::filled(&[channels], 1.0),
            bias: Param::zeros(&[channels]),
        }
    }

    fn forward(&self, x: &Array4<f64>) -> (Array2<f64>, Array2<f64>) {
        let pooled = global_avg_pool(x);
        let mut y = pooled.clone();
        for mut row in y.outer_iter_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale.value[c] + self.bias.value[c];
            }
        }
        (y, pooled)
    }

    fn backward(&mut self, pooled: &Array2<f64>, dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
        let mut dp = dy.clone();
        for (row_dy, (row_p, mut row_dp)) in dy
            .outer_iter()
            .zip(pooled.outer_iter().zip(dp.outer_iter_mut()))
        {
            for c in 0..row_dy.len() {
                self.scale.grad[c] += row_dy[c] * row_p[c];
                self.bias.grad[c] += row_dy[c];
                row_dp[c] = row_dy[c] * self.scale.value[c];
            }
        }
        global_avg_pool_backward(&dp, h, w)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "scale"), &self.scale);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Channel-wise squeeze/expand bottleneck on row vectors.
#[derive(Clone, Debug)]
pub struct Hourglass {
    pub reduce: Linear,
    pub expand: Linear,
}

#[derive(Clone, Debug)]
struct HourglassCache {
    x: Array2<f64>,
    hidden: Array2<f64>,
    relu: ReluCache,
}

impl Hourglass {
    fn new(rng: &mut ChaCha8Rng, input: usize, bottleneck: usize, output: usize) -> Self {
        Hourglass {
            reduce: Linear::new(rng, input, bottleneck),
            expand: Linear::new(rng, bottleneck, output),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, HourglassCache) {
        let (hidden, relu) = relu2(self.reduce.forward(x));
        let y = self.expand.forward(&hidden);
        (
            y,
            HourglassCache {
                x: x.clone(),
                hidden,
                relu,
            },
        )
    }

    fn backward(&mut self, cache: &HourglassCache, dy: &Array2<f64>) -> Array2<f64> {
        let dh = self.expand.backward(&cache.hidden, dy);
        let dh = relu2_backward(&cache.relu, dh);
        self.reduce.backward(&cache.x, &dh)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
    }
}

/// Top path: pool + depth-wise, then hourglass.
#[derive(Clone, Debug)]
pub struct FusionTop {
    pool: PoolDepthwise,
    hourglass: Hourglass,
}

#[derive(Clone, Debug)]
pub struct FusionTopCache {
    pooled: Array2<f64>,
    hourglass: HourglassCache,
    hw: (usize, usize),
}

impl FusionTop {
    fn new(rng: &mut ChaCha8Rng, channels: usize, bottleneck: usize, out: usize) -> Self {
        FusionTop {
            pool: PoolDepthwise::new(channels),
            hourglass: Hourglass::new(rng, channels, bottleneck, out),
        }
    }

    pub fn forward(&self, stacked: &Array4<f64>) -> (Array2<f64>, FusionTopCache) {
        let (_, _, h, w) = stacked.dim();
        let (v, pooled) = self.pool.forward(stacked);
        let (y, hourglass) = self.hourglass.forward(&v);
        (
            y,
            FusionTopCache {
                pooled,
                hourglass,
                hw: (h, w),
            },
        )
    }

    pub fn backward(&mut self, cache: &FusionTopCache, dy: &Array2<f64>) -> Array4<f64> {
        let dv = self.hourglass.backward(&cache.hourglass, dy);
        self.pool.backward(&cache.pooled, &dv, cache.hw.0, cache.hw.1)
    }
}

impl Module for FusionTop {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.pool.visit(&join(prefix, "dw"), f);
        self.hourglass.visit(&join(prefix, "hourglass"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.pool.visit_mut(&join(prefix, "dw"), f);
        self.hourglass.visit_mut(&join(prefix, "hourglass"), f);
    }
}

/// Bottom path: per-location hourglass, then pool + depth-wise.
#[derive(Clone, Debug)]
pub struct FusionBottom {
    hourglass: Hourglass,
    pool: PoolDepthwise,
}

#[derive(Clone, Debug)]
pub struct FusionBottomCache {
    hourglass: HourglassCache,
    pooled: Array2<f64>,
    dims: (usize, usize, usize),
}

impl FusionBottom {
    fn new(rng: &mut ChaCha8Rng, channels: usize, bottleneck: usize, out: usize) -> Self {
        FusionBottom {
            hourglass: Hourglass::new(rng, channels, bottleneck, out),
            pool: PoolDepthwise::new(out),
        }
    }

    pub fn forward(&self, stacked: &Array4<f64>) -> (Array2<f64>, FusionBottomCache) {
        let (n, _, h, w) = stacked.dim();
        let rows = nchw_to_rows(stacked);
        let (z, hourglass) = self.hourglass.forward(&rows);
        let map = rows_to_nchw(&z, n, h, w);
        let (y, pooled) = self.pool.forward(&map);
        (
            y,
            FusionBottomCache {
                hourglass,
                pooled,
                dims: (n, h, w),
            },
        )
    }

    pub fn backward(&mut self, cache: &FusionBottomCache, dy: &Array2<f64>) -> Array4<f64> {
        let (n, h, w) = cache.dims;
        let dmap = self.pool.backward(&cache.pooled, dy, h, w);
        let drows = self.hourglass.backward(&cache.hourglass, &nchw_to_rows(&dmap));
        rows_to_nchw(&drows, n, h, w)
    }
}

impl Module for FusionBottom {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.hourglass.visit(&join(prefix, "hourglass"), f);
        self.pool.visit(&join(prefix, "dw"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.hourglass.visit_mut(&join(prefix, "hourglass"), f);
        self.pool.visit_mut(&join(prefix, "dw"), f);
    }
}

#[derive(Clone, Debug)]
enum Fusion {
    /// Pool the map and project linearly (ablation variants).
    Pooled(Linear),
    Centrosymmetric { top: FusionTop, bottom: FusionBottom },
}

#[derive(Clone, Debug)]
enum FusionCache {
    Pooled { pooled: Array2<f64>, hw: (usize, usize) },
    Centrosymmetric { top: FusionTopCache, bottom: FusionBottomCache },
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    backbone: BackboneCache,
    stages: Option<StagesCache>,
    fusion: FusionCache,
}

#[derive(Clone, Debug)]
pub struct GlanceEncoder {
    pub config: EncoderConfig,
    pub backbone: Backbone,
    pub stages: Option<Stages>,
    fusion: Fusion,
}

impl GlanceEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&mut rng, &config);
        let stages = Stages::new(&mut rng, &config);
        let half = config.fused_dim / 2;
        let stacked = config.stacked_channels();
        let fusion = match config.variant {
            EncoderVariant::ResnetOnly => {
                Fusion::Pooled(Linear::new(&mut rng, config.backbone_channels, config.fused_dim))
            }
            EncoderVariant::Extractor => Fusion::Pooled(Linear::new(&mut rng, stacked, config.fused_dim)),
            EncoderVariant::Full => {
                let b = config.bottleneck(stacked);
                Fusion::Centrosymmetric {
                    top: FusionTop::new(&mut rng, stacked, b, half),
                    bottom: FusionBottom::new(&mut rng, stacked, b, half),
                }
            }
        };
        let stages = (config.variant != EncoderVariant::ResnetOnly).then_some(stages);
        Ok(GlanceEncoder {
            config,
            backbone,
            stages,
            fusion,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.fused_dim
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.config.input_channels || (h, w) != self.config.input_size {
            return Err(Error::ShapeMismatch(format!(
                "frame is {c}x{h}x{w}, encoder expects {}x{}x{}",
                self.config.input_channels, self.config.input_size.0, self.config.input_size.1
            )));
        }
        Ok(())
    }

    /// Local features of a batch of frames `(N, C, H, W)`.
    pub fn backbone_local(&self, frames: &Array4<f64>, train: bool) -> Result<(Array4<f64>, BackboneCache)> {
        self.check_input(frames)?;
        Ok(self.backbone.forward(frames, train))
    }

    pub fn progressive_global(&self, local: &Array4<f64>, train: bool) -> Result<(FeaturePyramid, StagesCache)> {
        let stages = self
            .stages
            .as_ref()
            .ok_or_else(|| Error::Config("the resnet-only variant has no dilated stages".into()))?;
        if local.dim().1 != self.config.backbone_channels {
            return Err(Error::ShapeMismatch(format!(
                "local map has {} channels, expected {}",
                local.dim().1,
                self.config.backbone_channels
            )));
        }
        Ok(stages.forward(local, train))
    }

    pub fn fusion_top(&self) -> Option<&FusionTop> {
        match &self.fusion {
            Fusion::Centrosymmetric { top, .. } => Some(top),
            Fusion::Pooled(_) => None,
        }
    }

    pub fn fusion_bottom(&self) -> Option<&FusionBottom> {
        match &self.fusion {
            Fusion::Centrosymmetric { bottom, .. } => Some(bottom),
            Fusion::Pooled(_) => None,
        }
    }

    pub fn fusion_top_mut(&mut self) -> Option<&mut FusionTop> {
        match &mut self.fusion {
            Fusion::Centrosymmetric { top, .. } => Some(top),
            Fusion::Pooled(_) => None,
        }
    }

    pub fn fusion_bottom_mut(&mut self) -> Option<&mut FusionBottom> {
        match &mut self.fusion {
            Fusion::Centrosymmetric { bottom, .. } => Some(bottom),
            Fusion::Pooled(_) => None,
        }
    }

    /// Frame features `(N, fused_dim)` for a batch of frames.
    pub fn forward(&self, frames: &Array4<f64>, train: bool) -> Result<(Array2<f64>, EncoderCache)> {
        let (local, backbone) = self.backbone_local(frames, train)?;
        let (map, stages) = match &self.stages {
            Some(st) => {
                let (pyr, c) = st.forward(&local, train);
                (pyr.stacked, Some(c))
            }
            None => (local, None),
        };
        let (_, _, h, w) = map.dim();
        let (y, fusion) = match &self.fusion {
            Fusion::Pooled(lin) => {
                let pooled = global_avg_pool(&map);
                (lin.forward(&pooled), FusionCache::Pooled { pooled, hw: (h, w) })
            }
            Fusion::Centrosymmetric { top, bottom } => {
                let (mut a, ct) = top.forward(&map);
                let (mut b, cb) = bottom.forward(&map);
                match self.config.fusion_paths {
                    FusionPaths::Both => {}
                    FusionPaths::TopOnly => b.fill(0.0),
                    FusionPaths::BottomOnly => a.fill(0.0),
                }
                (
                    concatenate(Axis(1), &[a.view(), b.view()]).expect("same batch"),
                    FusionCache::Centrosymmetric { top: ct, bottom: cb },
                )
            }
        };
        Ok((
            y,
            EncoderCache {
                backbone,
                stages,
                fusion,
            },
        ))
    }

    /// Backpropagates `dy` (N, fused_dim); returns the gradient w.r.t. the frames.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Array2<f64>) -> Array4<f64> {
        let d_map = match (&mut self.fusion, &cache.fusion) {
            (Fusion::Pooled(lin), FusionCache::Pooled { pooled, hw }) => {
                let dp = lin.backward(pooled, dy);
                global_avg_pool_backward(&dp, hw.0, hw.1)
            }
            (Fusion::Centrosymmetric { top, bottom }, FusionCache::Centrosymmetric { top: ct, bottom: cb }) => {
                let half = self.config.fused_dim / 2;
                let mut da = dy.slice(s![.., ..half]).to_owned();
                let mut db = dy.slice(s![.., half..]).to_owned();
                match self.config.fusion_paths {
                    FusionPaths::Both => {}
                    FusionPaths::TopOnly => db.fill(0.0),
                    FusionPaths::BottomOnly => da.fill(0.0),
                }
                top.backward(ct, &da) + bottom.backward(cb, &db)
            }
            _ => unreachable!("fusion cache matches fusion kind"),
        };
        let d_local = match (&mut self.stages, &cache.stages) {
            (Some(st), Some(c)) => st.backward(c, &d_map),
            _ => d_map,
        };
        self.backbone.backward(&cache.backbone, &d_local)
    }

    /// Inference on a single `H x W x C` frame (channel-last, as stored).
    pub fn encode_frame(&self, frame: &ndarray::Array3<f64>) -> Result<Array1<f64>> {
        let (h, w, c) = frame.dim();
        let x = frame
            .view()
            .permuted_axes([2, 0, 1])
            .to_owned()
            .into_shape_with_order((1, c, h, w))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let (y, _) = self.forward(&x, false)?;
        Ok(y.row(0).to_owned())
    }
}

impl Module for GlanceEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        if let Some(st) = &self.stages {
            st.visit(&join(prefix, "stages"), f);
        }
        match &self.fusion {
            Fusion::Pooled(lin) => lin.visit(&join(prefix, "pooled_head"), f),
            Fusion::Centrosymmetric { top, bottom } => {
                top.visit(&join(prefix, "fusion/top"), f);
                bottom.visit(&join(prefix, "fusion/bottom"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        if let Some(st) = &mut self.stages {
            st.visit_mut(&join(prefix, "stages"), f);
        }
        match &mut self.fusion {
            Fusion::Pooled(lin) => lin.visit_mut(&join(prefix, "pooled_head"), f),
            Fusion::Centrosymmetric { top, bottom } => {
                top.visit_mut(&join(prefix, "fusion/top"), f);
                bottom.visit_mut(&join(prefix, "fusion/bottom"), f);
            }
        }
    }
}
