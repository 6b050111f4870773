//! The encoder-decoder segmentation network and its configuration.
//!
//! The network is a U-shaped residual architecture over 6-D tensors
//! `[N, C, X, Y, Z, T]`. An initial convolution lifts the single intensity
//! channel to `base_filters`; each deeper encoder level halves the strided
//! extents with a stride-2 convolution that doubles the channel count, then
//! stacks pre-activation residual blocks. The decoder mirrors the encoder:
//! a pointwise channel-halving convolution, nearest-neighbor upsampling,
//! an additive skip from the matching encoder level, and one residual block
//! per level. A pointwise head plus channel softmax emits per-voxel class
//! probabilities (background, LV cavity, myocardium).
//!
//! Two modes share this code path:
//! * [`Mode::Seg4d`] mixes time everywhere: 3^4 kernels, stride 2 and
//!   upsampling factor 2 on all four axes.
//! * [`Mode::Seg3d`] is the frame-independent baseline: 3^3x1 kernels,
//!   stride/upsampling touch only x,y,z, inputs are single frames, and one
//!   extra encoder level compensates for the lost temporal context.

use crate::data::{IntensityField, LabelField};
use crate::error::{Error, Result};
use crate::nn::{
    ConvLayer, ConvLayerVars, DecoderUp, DecoderUpVars, DownConv, DownConvVars, ResBlock,
    ResBlockVars,
};
use crate::ops::conv::ConvSpec;
use crate::ops::loss::NUM_CLASSES;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Seg4d,
    Seg3d,
}

/// Everything needed to rebuild a network skeleton: the checkpoint format
/// embeds this so a saved model restores without external context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub mode: Mode,
    /// Channel count after the initial convolution; level `l` has
    /// `base_filters << l` channels.
    pub base_filters: usize,
    pub levels: usize,
    /// Residual blocks per encoder level, outermost first.
    pub blocks_per_level: Vec<usize>,
    /// Training crop / inference tile extents (x, y, z, t). Strided axes must
    /// be divisible by `2^(levels-1)`; 3-D mode requires t = 1.
    pub crop: [usize; 4],
    pub num_classes: usize,
    pub gn_groups: usize,
    pub gn_eps: f64,
    pub conv_bias: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk_4d()
    }
}

impl NetConfig {
    /// 4-D network at a size that trains in minutes on one CPU core.
    pub fn desk_4d() -> Self {
        NetConfig {
            mode: Mode::Seg4d,
            base_filters: 4,
            levels: 3,
            blocks_per_level: vec![1, 2, 4],
            crop: [32, 32, 24, 8],
            num_classes: NUM_CLASSES,
            gn_groups: 8,
            gn_eps: 1e-5,
            conv_bias: true,
        }
    }

    /// Full-scale 4-D network (reference resolution; CPU-hostile).
    pub fn full_4d() -> Self {
        NetConfig {
            base_filters: 8,
            crop: [96, 96, 64, 16],
            ..NetConfig::desk_4d()
        }
    }

    /// Frame-by-frame 3-D baseline at desk size.
    pub fn desk_3d() -> Self {
        NetConfig {
            mode: Mode::Seg3d,
            base_filters: 4,
            levels: 4,
            blocks_per_level: vec![1, 2, 4, 1],
            crop: [32, 32, 24, 1],
            num_classes: NUM_CLASSES,
            gn_groups: 8,
            gn_eps: 1e-5,
            conv_bias: true,
        }
    }

    /// Full-scale 3-D baseline.
    pub fn full_3d() -> Self {
        NetConfig {
            base_filters: 8,
            crop: [96, 96, 64, 1],
            ..NetConfig::desk_3d()
        }
    }

    /// Residual/initial convolution kernel extents for this mode.
    pub fn kernel(&self) -> [usize; 4] {
        match self.mode {
            Mode::Seg4d => [3, 3, 3, 3],
            Mode::Seg3d => [3, 3, 3, 1],
        }
    }

    /// Stride of the encoder's downsampling convolutions.
    pub fn down_stride(&self) -> [usize; 4] {
        match self.mode {
            Mode::Seg4d => [2, 2, 2, 2],
            Mode::Seg3d => [2, 2, 2, 1],
        }
    }

    /// Decoder upsampling factors (inverse of `down_stride`).
    pub fn up_factors(&self) -> [usize; 4] {
        self.down_stride()
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 levels for an encoder-decoder, got {}",
                self.levels
            )));
        }
        if self.blocks_per_level.len() != self.levels {
            return Err(Error::InvalidConfig(format!(
                "blocks_per_level has {} entries for {} levels",
                self.blocks_per_level.len(),
                self.levels
            )));
        }
        if self.blocks_per_level.iter().any(|&b| b == 0) {
            return Err(Error::InvalidConfig(
                "every level needs at least one residual block".into(),
            ));
        }
        if self.base_filters == 0 {
            return Err(Error::InvalidConfig("base_filters must be positive".into()));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::InvalidConfig(format!(
                "the loss and metrics are defined for {} classes, got {}",
                NUM_CLASSES, self.num_classes
            )));
        }
        if self.gn_groups == 0 {
            return Err(Error::InvalidConfig("gn_groups must be positive".into()));
        }
        if !(self.gn_eps.is_finite() && self.gn_eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gn_eps must be positive and finite, got {}",
                self.gn_eps
            )));
        }
        if self.crop.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!("degenerate crop {:?}", self.crop)));
        }
        let div = 1usize << (self.levels - 1);
        for (axis, (&c, &s)) in self.crop.iter().zip(&self.down_stride()).enumerate() {
            if s == 2 && c % div != 0 {
                return Err(Error::InvalidConfig(format!(
                    "crop axis {} is {}, not divisible by {} (levels = {})",
                    axis, c, div, self.levels
                )));
            }
        }
        if self.mode == Mode::Seg3d && self.crop[3] != 1 {
            return Err(Error::InvalidConfig(format!(
                "3-D mode processes single frames; crop t must be 1, got {}",
                self.crop[3]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLevel<S: Scalar> {
    /// Absent at level 0 (the initial convolution already set the width).
    pub down: Option<DownConv<S>>,
    pub blocks: Vec<ResBlock<S>>,
}

#[derive(Debug, Clone)]
pub struct DecoderLevel<S: Scalar> {
    /// Encoder level whose extents/channels this stage restores.
    pub target: usize,
    pub up: DecoderUp<S>,
    pub block: ResBlock<S>,
}

/// Owned parameters of one network. Construction order equals visitation
/// order equals checkpoint order, so a seed fully determines the bytes.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub config: NetConfig,
    pub init_conv: ConvLayer<S>,
    pub encoder: Vec<EncoderLevel<S>>,
    /// Deepest target first: levels-2, …, 0.
    pub decoder: Vec<DecoderLevel<S>>,
    pub end: ConvLayer<S>,
}

pub fn build<S: Scalar>(config: &NetConfig, seed: u64) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = config.kernel();
    let stride = config.down_stride();
    let bias = config.conv_bias;
    let init_spec = ConvSpec::new(kernel, [1, 1, 1, 1]).expect("kernel validated");
    let init_conv = ConvLayer::init(1, config.base_filters, init_spec, bias, &mut rng);
    let mut encoder = Vec::with_capacity(config.levels);
    for l in 0..config.levels {
        let down = (l > 0).then(|| {
            DownConv::init(config.channels_at(l - 1), kernel, stride, bias, &mut rng)
        });
        let blocks = (0..config.blocks_per_level[l])
            .map(|_| {
                ResBlock::init(
                    config.channels_at(l),
                    kernel,
                    config.gn_groups,
                    config.gn_eps,
                    bias,
                    &mut rng,
                )
            })
            .collect();
        encoder.push(EncoderLevel { down, blocks });
    }
    let mut decoder = Vec::with_capacity(config.levels - 1);
    for target in (0..config.levels - 1).rev() {
        let up = DecoderUp::init(config.channels_at(target + 1), config.up_factors(), bias, &mut rng);
        let block = ResBlock::init(
            config.channels_at(target),
            kernel,
            config.gn_groups,
            config.gn_eps,
            bias,
            &mut rng,
        );
        decoder.push(DecoderLevel { target, up, block });
    }
    let end = ConvLayer::init(
        config.channels_at(0),
        config.num_classes,
        ConvSpec::pointwise(),
        bias,
        &mut rng,
    );
    Ok(ModelParams {
        config: config.clone(),
        init_conv,
        encoder,
        decoder,
        end,
    })
}

impl<S: Scalar> ModelParams<S> {
    pub fn bind(&self, tape: &mut Tape<S>) -> ModelVars {
        ModelVars {
            config: self.config.clone(),
            init_conv: self.init_conv.bind(tape),
            encoder: self
                .encoder
                .iter()
                .map(|lvl| EncoderLevelVars {
                    down: lvl.down.as_ref().map(|d| d.bind(tape)),
                    blocks: lvl.blocks.iter().map(|b| b.bind(tape)).collect(),
                })
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|d| DecoderLevelVars {
                    target: d.target,
                    up: d.up.bind(tape),
                    block: d.block.bind(tape),
                })
                .collect(),
            end: self.end.bind(tape),
        }
    }

    /// All parameters as (dotted path, tensor), in checkpoint order.
    pub fn visit(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        self.init_conv.visit("init_conv", &mut out);
        for (l, lvl) in self.encoder.iter().enumerate() {
            if let Some(d) = &lvl.down {
                d.visit(&format!("enc{l}.down"), &mut out);
            }
            for (b, block) in lvl.blocks.iter().enumerate() {
                block.visit(&format!("enc{l}.block{b}"), &mut out);
            }
        }
        for d in &self.decoder {
            d.up.visit(&format!("dec{}", d.target), &mut out);
            d.block.visit(&format!("dec{}.block", d.target), &mut out);
        }
        self.end.visit("end", &mut out);
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        self.init_conv.visit_mut("init_conv", &mut out);
        for (l, lvl) in self.encoder.iter_mut().enumerate() {
            if let Some(d) = &mut lvl.down {
                d.visit_mut(&format!("enc{l}.down"), &mut out);
            }
            for (b, block) in lvl.blocks.iter_mut().enumerate() {
                block.visit_mut(&format!("enc{l}.block{b}"), &mut out);
            }
        }
        for d in &mut self.decoder {
            d.up.visit_mut(&format!("dec{}", d.target), &mut out);
            d.block.visit_mut(&format!("dec{}.block", d.target), &mut out);
        }
        self.end.visit_mut("end", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Run one already-shaped tile `[1, 1, x, y, z, t]` through the network
    /// and return class probabilities `[1, classes, x, y, z, t]`.
    pub fn forward_probs(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let vars = self.bind(&mut tape);
        let y = vars.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Segment a full sequence by sliding crop-sized tiles with 50% overlap,
    /// zero-padding axes shorter than the tile, summing class probabilities
    /// where tiles overlap, and taking the per-voxel argmax (lowest class id
    /// wins exact ties). In 3-D mode the tile is a single frame, so the
    /// sequence is processed frame by frame.
    pub fn predict_labels(&self, field: &IntensityField) -> Result<LabelField> {
        let dims = field.dims;
        let numel: usize = dims.iter().product();
        if field.data.len() != numel {
            return Err(Error::shape(
                "predict_labels",
                format!("field dims {:?} need {} values, got {}", dims, numel, field.data.len()),
            ));
        }
        let crop = self.config.crop;
        let padded: [usize; 4] = std::array::from_fn(|a| dims[a].max(crop[a]));
        let pvox: usize = padded.iter().product();
        let mut data = vec![0.0f32; pvox];
        if padded == dims {
            data.copy_from_slice(&field.data);
        } else {
            for ix in 0..dims[0] {
                for iy in 0..dims[1] {
                    for iz in 0..dims[2] {
                        let src = ((ix * dims[1] + iy) * dims[2] + iz) * dims[3];
                        let dst = ((ix * padded[1] + iy) * padded[2] + iz) * padded[3];
                        data[dst..dst + dims[3]]
                            .copy_from_slice(&field.data[src..src + dims[3]]);
                    }
                }
            }
        }
        let origins: [Vec<usize>; 4] = std::array::from_fn(|a| tile_origins(padded[a], crop[a]));
        let classes = self.config.num_classes;
        let mut acc = vec![0.0f32; classes * pvox];
        let mut tile = vec![S::zero(); crop.iter().product()];
        for &ox in &origins[0] {
            for &oy in &origins[1] {
                for &oz in &origins[2] {
                    for &ot in &origins[3] {
                        for ix in 0..crop[0] {
                            for iy in 0..crop[1] {
                                for iz in 0..crop[2] {
                                    let src = (((ox + ix) * padded[1] + oy + iy) * padded[2]
                                        + oz
                                        + iz)
                                        * padded[3]
                                        + ot;
                                    let dst = ((ix * crop[1] + iy) * crop[2] + iz) * crop[3];
                                    for it in 0..crop[3] {
                                        tile[dst + it] = S::from_f64(data[src + it] as f64);
                                    }
                                }
                            }
                        }
                        let x = Tensor::new(
                            vec![1, 1, crop[0], crop[1], crop[2], crop[3]],
                            tile.clone(),
                        )?;
                        let probs = self.forward_probs(&x)?;
                        let p = probs.data();
                        let tile_vox: usize = crop.iter().product();
                        for c in 0..classes {
                            let cbase = c * tile_vox;
                            for ix in 0..crop[0] {
                                for iy in 0..crop[1] {
                                    for iz in 0..crop[2] {
                                        let src =
                                            cbase + ((ix * crop[1] + iy) * crop[2] + iz) * crop[3];
                                        let dst = c * pvox
                                            + (((ox + ix) * padded[1] + oy + iy) * padded[2]
                                                + oz
                                                + iz)
                                                * padded[3]
                                            + ot;
                                        for it in 0..crop[3] {
                                            acc[dst + it] += p[src + it].as_f64() as f32;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut labels = vec![0u8; numel];
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let pad_row = ((ix * padded[1] + iy) * padded[2] + iz) * padded[3];
                    let out_row = ((ix * dims[1] + iy) * dims[2] + iz) * dims[3];
                    for it in 0..dims[3] {
                        let v = pad_row + it;
                        let mut best = 0usize;
                        let mut best_p = acc[v];
                        for c in 1..classes {
                            let p = acc[c * pvox + v];
                            if p > best_p {
                                best = c;
                                best_p = p;
                            }
                        }
                        labels[out_row + it] = best as u8;
                    }
                }
            }
        }
        Ok(LabelField { dims, data: labels })
    }
}

/// Tile origins along one axis: stride of half the tile, plus a final tile
/// flush with the end so every voxel is covered.
fn tile_origins(dim: usize, crop: usize) -> Vec<usize> {
    let step = (crop / 2).max(1);
    let mut v: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|&o| o + crop < dim)
        .collect();
    v.push(dim - crop);
    v.dedup();
    v
}

#[derive(Debug, Clone)]
struct EncoderLevelVars {
    down: Option<DownConvVars>,
    blocks: Vec<ResBlockVars>,
}

#[derive(Debug, Clone)]
struct DecoderLevelVars {
    target: usize,
    up: DecoderUpVars,
    block: ResBlockVars,
}

/// Tape-bound network; `forward` records the whole computation.
#[derive(Debug, Clone)]
pub struct ModelVars {
    config: NetConfig,
    init_conv: ConvLayerVars,
    encoder: Vec<EncoderLevelVars>,
    decoder: Vec<DecoderLevelVars>,
    end: ConvLayerVars,
}

impl ModelVars {
    /// Leaf variables in visitation order — index `i` here is the same
    /// parameter as index `i` of [`ModelParams::visit`]/`visit_mut`, which is
    /// what lets the optimizer zip gradients onto tensors.
    pub fn trainable(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let conv = |c: &ConvLayerVars, out: &mut Vec<Var>| {
            out.push(c.weight);
            if let Some(b) = c.bias {
                out.push(b);
            }
        };
        let norm = |n: &crate::nn::NormLayerVars, out: &mut Vec<Var>| {
            out.push(n.gamma);
            out.push(n.beta);
        };
        let block = |b: &ResBlockVars, out: &mut Vec<Var>| {
            norm(&b.norm1, out);
            conv(&b.conv1, out);
            norm(&b.norm2, out);
            conv(&b.conv2, out);
        };
        conv(&self.init_conv, &mut out);
        for lvl in &self.encoder {
            if let Some(d) = &lvl.down {
                conv(&d.conv, &mut out);
            }
            for b in &lvl.blocks {
                block(b, &mut out);
            }
        }
        for d in &self.decoder {
            conv(&d.up.reduce, &mut out);
            block(&d.block, &mut out);
        }
        conv(&self.end, &mut out);
        out
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let nd = tape.value(x).dims6()?;
        if nd.c != 1 {
            return Err(Error::shape(
                "model_forward",
                format!("expected 1 input channel, got {}", nd.c),
            ));
        }
        let div = 1usize << (self.config.levels - 1);
        for (axis, (&extent, &stride)) in
            nd.xyzt().iter().zip(&self.config.down_stride()).enumerate()
        {
            if stride == 2 && extent % div != 0 {
                return Err(Error::shape(
                    "model_forward",
                    format!(
                        "axis {} extent {} is not divisible by {}; extents must survive {} halvings",
                        axis,
                        extent,
                        div,
                        self.config.levels - 1
                    ),
                ));
            }
        }
        if self.config.mode == Mode::Seg3d && nd.t != 1 {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "3-D mode normalizes statistics per frame; pass single frames, got t = {}",
                    nd.t
                ),
            ));
        }
        let mut h = self.init_conv.apply(tape, x)?;
        let mut skips = Vec::with_capacity(self.encoder.len().saturating_sub(1));
        for (l, level) in self.encoder.iter().enumerate() {
            if let Some(down) = &level.down {
                h = down.apply(tape, h)?;
            }
            for block in &level.blocks {
                h = block.apply(tape, h)?;
            }
            if l + 1 < self.encoder.len() {
                skips.push(h);
            }
        }
        for dec in &self.decoder {
            h = dec.up.apply(tape, h, skips[dec.target])?;
            h = dec.block.apply(tape, h)?;
        }
        let logits = self.end.apply(tape, h)?;
        tape.softmax_channels(logits)
    }
}

/// One line of the architecture table: stage name, repeat count, and the
/// output shape as `[channels, x, y, z, t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub name: String,
    pub repeat: usize,
    pub shape: [usize; 5],
}

impl AuditRow {
    pub fn shape_string(&self) -> String {
        let s = self.shape;
        format!("{}x{}x{}x{}x{}", s[0], s[1], s[2], s[3], s[4])
    }
}

/// Tabulate per-stage output shapes for the configured crop, mirroring the
/// reference architecture table. Pure arithmetic — no parameters are built.
pub fn shape_audit(config: &NetConfig) -> Result<Vec<AuditRow>> {
    config.validate()?;
    let down_spec = ConvSpec::new(config.kernel(), config.down_stride())?;
    let mut rows = Vec::new();
    let mut extents = config.crop;
    let row = |name: String, repeat: usize, c: usize, e: [usize; 4]| AuditRow {
        name,
        repeat,
        shape: [c, e[0], e[1], e[2], e[3]],
    };
    rows.push(row("Input".into(), 1, 1, extents));
    rows.push(row("InitConv".into(), 1, config.base_filters, extents));
    rows.push(row(
        "EncoderBlock0".into(),
        config.blocks_per_level[0],
        config.base_filters,
        extents,
    ));
    let mut per_level = vec![extents];
    for l in 1..config.levels {
        for a in 0..4 {
            extents[a] = down_spec.out_extent(a, extents[a]);
        }
        per_level.push(extents);
        rows.push(row(
            format!("EncoderDown{l}"),
            1,
            config.channels_at(l),
            extents,
        ));
        rows.push(row(
            format!("EncoderBlock{l}"),
            config.blocks_per_level[l],
            config.channels_at(l),
            extents,
        ));
    }
    for target in (0..config.levels - 1).rev() {
        let e = per_level[target];
        rows.push(row(format!("DecoderUp{target}"), 1, config.channels_at(target), e));
        rows.push(row(
            format!("DecoderBlock{target}"),
            1,
            config.channels_at(target),
            e,
        ));
    }
    rows.push(row(
        "DecoderEnd".into(),
        1,
        config.num_classes,
        config.crop,
    ));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetConfig {
        NetConfig {
            mode: Mode::Seg4d,
            base_filters: 2,
            levels: 2,
            blocks_per_level: vec![1, 1],
            crop: [8, 8, 8, 4],
            num_classes: NUM_CLASSES,
            gn_groups: 8,
            gn_eps: 1e-5,
            conv_bias: true,
        }
    }

    #[test]
    fn presets_validate() {
        for cfg in [
            NetConfig::desk_4d(),
            NetConfig::desk_3d(),
            NetConfig::full_4d(),
            NetConfig::full_3d(),
        ] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = NetConfig::desk_4d();
        c.blocks_per_level = vec![1, 2];
        assert!(c.validate().is_err());

        let mut c = NetConfig::desk_4d();
        c.crop = [30, 32, 24, 8]; // 30 % 4 != 0
        assert!(c.validate().is_err());

        let mut c = NetConfig::desk_3d();
        c.crop = [32, 32, 24, 8]; // 3-D mode needs t = 1
        assert!(c.validate().is_err());

        let mut c = NetConfig::desk_4d();
        c.num_classes = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_emits_probabilities() {
        let params = build::<f32>(&tiny_config(), 7).unwrap();
        let x = Tensor::from_fn(&[1, 1, 8, 8, 8, 4], |i| ((i % 17) as f32 - 8.0) * 0.1);
        let probs = params.forward_probs(&x).unwrap();
        assert_eq!(probs.shape(), &[1, 3, 8, 8, 8, 4]);
        let vox = 8 * 8 * 8 * 4;
        let d = probs.data();
        for v in 0..vox {
            let s: f32 = (0..3).map(|c| d[c * vox + v]).sum();
            assert!((s - 1.0).abs() < 1e-5, "voxel {} sums to {}", v, s);
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let params = build::<f32>(&tiny_config(), 7).unwrap();
        let mut tape = Tape::new();
        let two_ch = tape.leaf(Tensor::zeros(&[1, 2, 8, 8, 8, 4]), false);
        let vars = params.bind(&mut tape);
        assert!(vars.forward(&mut tape, two_ch).is_err());

        let mut tape = Tape::new();
        let odd = tape.leaf(Tensor::zeros(&[1, 1, 7, 8, 8, 4]), false);
        let vars = params.bind(&mut tape);
        assert!(vars.forward(&mut tape, odd).is_err());
    }

    #[test]
    fn seg3d_requires_single_frames() {
        let mut cfg = tiny_config();
        cfg.mode = Mode::Seg3d;
        cfg.crop = [8, 8, 8, 1];
        let params = build::<f32>(&cfg, 7).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 8, 8, 8, 2]), false);
        let vars = params.bind(&mut tape);
        assert!(vars.forward(&mut tape, x).is_err());
        let ok = params
            .forward_probs(&Tensor::from_fn(&[1, 1, 8, 8, 8, 1], |i| i as f32 * 1e-3))
            .unwrap();
        assert_eq!(ok.shape(), &[1, 3, 8, 8, 8, 1]);
    }

    #[test]
    fn param_count_is_a_function_of_config_only() {
        let a = build::<f32>(&tiny_config(), 1).unwrap();
        let b = build::<f32>(&tiny_config(), 2).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert!(a.param_count() > 0);
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = build::<f32>(&tiny_config(), 5).unwrap();
        let b = build::<f32>(&tiny_config(), 5).unwrap();
        for ((pa, ta), (pb, tb)) in a.visit().iter().zip(b.visit().iter()) {
            assert_eq!(pa, pb);
            assert_eq!(ta.data(), tb.data());
        }
        let c = build::<f32>(&tiny_config(), 6).unwrap();
        assert_ne!(
            a.init_conv.weight.data(),
            c.init_conv.weight.data(),
            "different seeds must differ"
        );
    }

    #[test]
    fn trainable_vars_align_with_visitation() {
        let params = build::<f32>(&tiny_config(), 9).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let leaves = vars.trainable();
        let visited = params.visit();
        assert_eq!(leaves.len(), visited.len());
        for (v, (path, t)) in leaves.iter().zip(&visited) {
            assert_eq!(tape.value(*v).shape(), t.shape(), "{}", path);
            assert_eq!(tape.value(*v).data(), t.data(), "{}", path);
        }
    }

    #[test]
    fn visitation_paths_are_unique() {
        let params = build::<f32>(&NetConfig::desk_4d(), 3).unwrap();
        let visited = params.visit();
        let mut paths: Vec<&str> = visited.iter().map(|(p, _)| p.as_str()).collect();
        let n = paths.len();
        paths.sort_unstable();
        paths.dedup();
        assert_eq!(paths.len(), n, "duplicate parameter paths");
    }

    #[test]
    fn audit_of_reference_scale_matches_architecture_table() {
        let rows = shape_audit(&NetConfig::full_4d()).unwrap();
        let expect: Vec<(&str, usize, [usize; 5])> = vec![
            ("Input", 1, [1, 96, 96, 64, 16]),
            ("InitConv", 1, [8, 96, 96, 64, 16]),
            ("EncoderBlock0", 1, [8, 96, 96, 64, 16]),
            ("EncoderDown1", 1, [16, 48, 48, 32, 8]),
            ("EncoderBlock1", 2, [16, 48, 48, 32, 8]),
            ("EncoderDown2", 1, [32, 24, 24, 16, 4]),
            ("EncoderBlock2", 4, [32, 24, 24, 16, 4]),
            ("DecoderUp1", 1, [16, 48, 48, 32, 8]),
            ("DecoderBlock1", 1, [16, 48, 48, 32, 8]),
            ("DecoderUp0", 1, [8, 96, 96, 64, 16]),
            ("DecoderBlock0", 1, [8, 96, 96, 64, 16]),
            ("DecoderEnd", 1, [3, 96, 96, 64, 16]),
        ];
        assert_eq!(rows.len(), expect.len());
        for (row, (name, repeat, shape)) in rows.iter().zip(&expect) {
            assert_eq!(row.name, *name);
            assert_eq!(row.repeat, *repeat, "{}", name);
            assert_eq!(row.shape, *shape, "{}", name);
        }
    }

    #[test]
    fn audit_of_3d_baseline_reaches_deep_bottleneck() {
        let rows = shape_audit(&NetConfig::full_3d()).unwrap();
        let bottleneck = rows
            .iter()
            .find(|r| r.name == "EncoderBlock3")
            .expect("level 3 exists");
        assert_eq!(bottleneck.shape, [64, 12, 12, 8, 1]);
        assert_eq!(rows.last().unwrap().shape, [3, 96, 96, 64, 1]);
    }

    #[test]
    fn tile_origins_cover_and_overlap() {
        assert_eq!(tile_origins(96, 32), vec![0, 16, 32, 48, 64]);
        assert_eq!(tile_origins(32, 32), vec![0]);
        assert_eq!(tile_origins(48, 32), vec![0, 16]);
        assert_eq!(tile_origins(20, 8), vec![0, 4, 8, 12]);
        // Single-frame tiles slide one frame at a time.
        assert_eq!(tile_origins(4, 1), vec![0, 1, 2, 3]);
        for (dim, crop) in [(96, 32), (48, 32), (20, 8), (7, 3)] {
            let o = tile_origins(dim, crop);
            assert_eq!(*o.last().unwrap(), dim - crop);
            for w in o.windows(2) {
                assert!(w[1] - w[0] <= crop, "gap between tiles");
            }
        }
    }

    #[test]
    fn predict_labels_covers_volume_without_padding_artifacts() {
        let cfg = tiny_config();
        let params = build::<f32>(&cfg, 11).unwrap();
        // Volume larger than the crop on x/t, smaller on z.
        let dims = [12, 8, 6, 6];
        let field = IntensityField {
            dims,
            data: (0..dims.iter().product::<usize>())
                .map(|i| ((i % 23) as f32 - 11.0) * 0.05)
                .collect(),
        };
        let labels = params.predict_labels(&field).unwrap();
        assert_eq!(labels.dims, dims);
        assert_eq!(labels.data.len(), field.data.len());
        assert!(labels.data.iter().all(|&l| l <= 2));
    }
}
