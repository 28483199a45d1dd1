use crate::error::{config, shape, Result};
use crate::layers::BlockSpec;
use crate::model::config::{ModelConfig, ResampleMode, Role};

/// Parameter-free pixel reshuffles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReshuffleOp {
    HaarDown,
    HaarUp,
    SpaceToDepth,
    DepthToSpace,
}

/// Named outputs tapped from the middle of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tap {
    Y,
    Z,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    /// Appends the level embedding as constant planes.
    ConcatLevel { channels: usize },
    Conv {
        kernel: usize,
        stride: usize,
        groups: usize,
        scaled: bool,
        relu: bool,
    },
    Reshuffle(ReshuffleOp),
    Block { spec: BlockSpec, scaled: bool },
    SpatialScale,
    Emit(Tap),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub op: LayerOp,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Downsampling factor of the layer input relative to the image.
    pub scale_in: usize,
    pub scale_out: usize,
}

impl LayerNode {
    /// MACs per image pixel.
    pub fn macs_per_pixel(&self) -> f64 {
        let per_out = match &self.op {
            LayerOp::Conv { kernel, groups, .. } => {
                self.out_channels * (self.in_channels / groups) * kernel * kernel
            }
            LayerOp::Block { spec, .. } => spec.macs_per_pixel(),
            _ => 0,
        };
        per_out as f64 / (self.scale_out * self.scale_out) as f64
    }

    pub fn param_count(&self) -> usize {
        match &self.op {
            LayerOp::Conv {
                kernel,
                groups,
                scaled,
                ..
            } => {
                let cpg = self.in_channels / groups;
                conv_params(self.out_channels, cpg, *kernel, *scaled)
            }
            LayerOp::Block { spec, scaled } => {
                let c = spec.channels;
                conv_params(spec.hidden_3x3(), c / spec.groups(), 3, *scaled)
                    + conv_params(spec.hidden_1x1(), spec.hidden_3x3(), 1, *scaled)
                    + conv_params(c, spec.hidden_1x1(), 1, *scaled)
            }
            LayerOp::SpatialScale => self.out_channels,
            _ => 0,
        }
    }
}

fn conv_params(k: usize, cpg: usize, kernel: usize, scaled: bool) -> usize {
    k * cpg * kernel * kernel + k + if scaled { cpg + k } else { 0 }
}

/// Ordered layer list of one sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub config: ModelConfig,
    pub input_channels: usize,
    pub input_scale: usize,
    pub nodes: Vec<LayerNode>,
}

struct Builder {
    nodes: Vec<LayerNode>,
    channels: usize,
    scale: usize,
    scaled: bool,
    resample: ResampleMode,
}

impl Builder {
    fn push(&mut self, name: String, op: LayerOp, out_channels: usize, scale_out: usize) {
        self.nodes.push(LayerNode {
            name,
            op,
            in_channels: self.channels,
            out_channels,
            scale_in: self.scale,
            scale_out,
        });
        self.channels = out_channels;
        self.scale = scale_out;
    }

    fn conv(&mut self, name: String, out: usize, kernel: usize, stride: usize, relu: bool) {
        let op = LayerOp::Conv {
            kernel,
            stride,
            groups: 1,
            scaled: self.scaled,
            relu,
        };
        let s = self.scale * stride;
        self.push(name, op, out, s);
    }

    fn reshuffle(&mut self, name: String, op: ReshuffleOp) {
        let (c, s) = match op {
            ReshuffleOp::HaarDown | ReshuffleOp::SpaceToDepth => (self.channels * 4, self.scale * 2),
            ReshuffleOp::HaarUp | ReshuffleOp::DepthToSpace => (self.channels / 4, self.scale / 2),
        };
        self.push(name, LayerOp::Reshuffle(op), c, s);
    }

    fn down(&mut self, name: &str, out: usize, relu: bool) {
        match self.resample {
            ResampleMode::Haar => {
                self.reshuffle(format!("{name}.haar"), ReshuffleOp::HaarDown);
                self.conv(format!("{name}.conv"), out, 1, 1, relu);
            }
            ResampleMode::PixelShuffle => {
                self.reshuffle(format!("{name}.s2d"), ReshuffleOp::SpaceToDepth);
                self.conv(format!("{name}.conv"), out, 1, 1, relu);
            }
            ResampleMode::StridedConv => self.conv(format!("{name}.conv"), out, 3, 2, relu),
        }
    }

    fn up(&mut self, name: &str, out: usize) {
        match self.resample {
            ResampleMode::Haar => {
                self.conv(format!("{name}.conv"), 4 * out, 1, 1, false);
                self.reshuffle(format!("{name}.ihaar"), ReshuffleOp::HaarUp);
            }
            ResampleMode::PixelShuffle => {
                self.conv(format!("{name}.conv"), 4 * out, 1, 1, false);
                self.reshuffle(format!("{name}.d2s"), ReshuffleOp::DepthToSpace);
            }
            ResampleMode::StridedConv => {
                self.conv(format!("{name}.conv"), 4 * out, 3, 1, false);
                self.reshuffle(format!("{name}.d2s"), ReshuffleOp::DepthToSpace);
            }
        }
    }

    fn stage(&mut self, cfg: &ModelConfig, index: usize) -> Result<()> {
        let st = cfg.stages[index];
        for (j, chain) in [st.chain1, st.chain2].iter().enumerate() {
            let spec = st.block_spec(j)?;
            for r in 0..chain.repeats {
                let op = LayerOp::Block {
                    spec,
                    scaled: self.scaled,
                };
                let s = self.scale;
                self.push(format!("stage{}.chain{}.block{}", index + 1, j + 1, r), op, st.channels, s);
            }
        }
        if cfg.scales.spatial_scales() {
            let (c, s) = (self.channels, self.scale);
            self.push(format!("stage{}.gamma", index + 1), LayerOp::SpatialScale, c, s);
        }
        Ok(())
    }

    fn concat_level(&mut self, channels: usize) {
        if channels > 0 {
            let (c, s) = (self.channels + channels, self.scale);
            self.push("level".into(), LayerOp::ConcatLevel { channels }, c, s);
        }
    }

    fn emit(&mut self, tap: Tap) {
        let (c, s) = (self.channels, self.scale);
        let name = match tap {
            Tap::Y => "emit.y",
            Tap::Z => "emit.z",
        };
        self.push(name.into(), LayerOp::Emit(tap), c, s);
    }
}

/// Builds the layer list of a sub-network. Weights are created separately,
/// so the same graph drives MAC counting, initialisation and loading.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let (input_channels, input_scale) = match cfg.role {
        Role::OuterEncoder => (3, 1),
        Role::OuterDecoder => (cfg.latent_channels, 16),
        Role::ScaleDecoder | Role::ContextDecoder => (cfg.hyper_channels, 64),
    };
    let mut b = Builder {
        nodes: Vec::new(),
        channels: input_channels,
        scale: input_scale,
        scaled: cfg.scales.conv_scales(),
        resample: cfg.resample,
    };
    match cfg.role {
        Role::OuterEncoder => {
            b.concat_level(cfg.level_channels);
            for i in 0..3 {
                b.down(&format!("down{}", i + 1), cfg.stages[i].channels, false);
                b.stage(cfg, i)?;
            }
            b.down("down4", cfg.latent_channels, false);
            b.emit(Tap::Y);
            b.down("hyper1", cfg.hyper_channels, true);
            b.down("hyper2", cfg.hyper_channels, false);
            b.emit(Tap::Z);
        }
        Role::OuterDecoder => {
            b.concat_level(cfg.level_channels);
            for i in 0..3 {
                b.up(&format!("up{}", i + 1), cfg.stages[i].channels);
                b.stage(cfg, i)?;
            }
            b.up("up4", 3);
        }
        Role::ScaleDecoder | Role::ContextDecoder => {
            for i in 0..2 {
                b.up(&format!("up{}", i + 1), cfg.stages[i].channels);
                b.stage(cfg, i)?;
            }
            let head = if cfg.role == Role::ScaleDecoder {
                cfg.latent_channels
            } else {
                2 * cfg.latent_channels
            };
            b.conv("head".into(), head, 1, 1, false);
        }
    }
    let g = ModelGraph {
        config: cfg.clone(),
        input_channels,
        input_scale,
        nodes: b.nodes,
    };
    g.validate()?;
    Ok(g)
}

impl ModelGraph {
    pub fn output_channels(&self) -> usize {
        self.nodes.last().map_or(self.input_channels, |n| n.out_channels)
    }

    pub fn output_scale(&self) -> usize {
        self.nodes.last().map_or(self.input_scale, |n| n.scale_out)
    }

    pub fn node(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Structural check that every layer consumes what its predecessor emits.
    pub fn validate(&self) -> Result<()> {
        let mut c = self.input_channels;
        let mut s = self.input_scale;
        for n in &self.nodes {
            if n.in_channels != c || n.scale_in != s {
                return Err(shape(format!(
                    "layer {} expects {}ch at 1/{}, predecessor gives {}ch at 1/{}",
                    n.name, n.in_channels, n.scale_in, c, s
                )));
            }
            let ok = match &n.op {
                LayerOp::ConcatLevel { channels } => n.out_channels == c + channels && n.scale_out == s,
                LayerOp::Conv {
                    kernel,
                    stride,
                    groups,
                    ..
                } => {
                    *kernel > 0
                        && *groups > 0
                        && c % groups == 0
                        && n.out_channels % groups == 0
                        && n.scale_out == s * stride
                }
                LayerOp::Reshuffle(op) => match op {
                    ReshuffleOp::HaarDown | ReshuffleOp::SpaceToDepth => {
                        n.out_channels == 4 * c && n.scale_out == 2 * s
                    }
                    ReshuffleOp::HaarUp | ReshuffleOp::DepthToSpace => {
                        c % 4 == 0 && n.out_channels == c / 4 && n.scale_out * 2 == s
                    }
                },
                LayerOp::Block { spec, .. } => {
                    spec.channels == c && n.out_channels == c && n.scale_out == s
                }
                LayerOp::SpatialScale | LayerOp::Emit(_) => n.out_channels == c && n.scale_out == s,
            };
            if !ok {
                return Err(shape(format!("layer {} is inconsistent", n.name)));
            }
            c = n.out_channels;
            s = n.scale_out;
        }
        let tap_scale = |t: Tap| {
            self.nodes
                .iter()
                .find(|n| n.op == LayerOp::Emit(t))
                .map(|n| n.scale_out)
        };
        let cfg = &self.config;
        match cfg.role {
            Role::OuterEncoder => {
                if tap_scale(Tap::Y) != Some(16) || tap_scale(Tap::Z) != Some(64) {
                    return Err(config("role", "encoder must emit y at 1/16 and z at 1/64"));
                }
            }
            Role::OuterDecoder => {
                if c != 3 || s != 1 {
                    return Err(config("role", "decoder must end in 3 channels at full resolution"));
                }
            }
            Role::ScaleDecoder | Role::ContextDecoder => {
                if s != 16 {
                    return Err(config("role", "hyper decoders must end at 1/16"));
                }
            }
        }
        Ok(())
    }
}

/// kMACs per image pixel. Reshuffles, scales and concatenation cost nothing.
pub fn count_macs_per_pixel(g: &ModelGraph) -> f64 {
    g.nodes.iter().map(LayerNode::macs_per_pixel).sum::<f64>() / 1000.0
}

/// Weights, biases and learned scales.
pub fn count_params(g: &ModelGraph) -> usize {
    g.nodes.iter().map(LayerNode::param_count).sum()
}

/// Closed-form MAC count of an outer decoder config with Haar resampling,
/// without materialising a graph. Used by the architecture search.
pub fn decoder_kmacs(cfg: &ModelConfig) -> f64 {
    let mut total = 0.0f64;
    let mut c_in = cfg.latent_channels + cfg.level_channels;
    let mut d = 16usize;
    for st in &cfg.stages {
        total += (c_in * 4 * st.channels) as f64 / (d * d) as f64;
        d /= 2;
        total += stage_macs(st) as f64 / (d * d) as f64;
        c_in = st.channels;
    }
    total += (c_in * 12) as f64 / (d * d) as f64;
    total / 1000.0
}

/// Closed-form MAC count of an outer encoder config with Haar resampling.
pub fn encoder_kmacs(cfg: &ModelConfig) -> f64 {
    let mut total = 0.0f64;
    let mut c_in = 3 + cfg.level_channels;
    let mut d = 1usize;
    for st in &cfg.stages {
        d *= 2;
        total += (4 * c_in * st.channels) as f64 / (d * d) as f64;
        total += stage_macs(st) as f64 / (d * d) as f64;
        c_in = st.channels;
    }
    for out in [cfg.latent_channels, cfg.hyper_channels, cfg.hyper_channels] {
        d *= 2;
        total += (4 * c_in * out) as f64 / (d * d) as f64;
        c_in = out;
    }
    total / 1000.0
}

fn stage_macs(st: &crate::model::config::StageConfig) -> usize {
    [st.chain1, st.chain2]
        .iter()
        .map(|ch| {
            let spec = BlockSpec {
                channels: st.channels,
                expand_3x3: ch.expand_3x3,
                expand_1x1: ch.expand_1x1,
            };
            ch.repeats * spec.macs_per_pixel()
        })
        .sum()
}
