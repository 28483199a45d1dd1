use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape, Result};
use crate::layers::{
    convscale_collapse, convscale_forward, convscale311_forward, haar_collapse_into_conv,
    haar_resample, Block311, CollapsedBlock, ConvScaleParams, Direction, Reshuffle, SpatialScale,
};
use crate::model::config::Role;
use crate::model::graph::{build_model, LayerOp, ModelGraph, ReshuffleOp, Tap};
use crate::model::store::WeightStore;
use crate::model::ModelConfig;
use crate::tensor::{conv2d, depth_to_space, space_to_depth, ConvWeights, Shape, Tensor};

/// Index the scale head is biased towards at initialisation.
pub const INIT_SCALE_INDEX: f32 = 24.0;

#[derive(Clone, Debug, PartialEq)]
pub enum NodeParams {
    None,
    Conv(ConvScaleParams),
    Block(Block311),
    Spatial(SpatialScale),
}

/// A graph with its weights, in training form.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub graph: ModelGraph,
    pub params: Vec<NodeParams>,
}

/// Outputs of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    pub y: Option<Tensor>,
    pub z: Option<Tensor>,
    pub out: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, bound: f32) -> f32 {
    let u = (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32);
    (2.0 * u - 1.0) * bound
}

fn random_conv(
    rng: &mut ChaCha8Rng,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    gain: f32,
) -> Result<ConvScaleParams> {
    let mut w = ConvWeights::zeros(cin, cout, kernel, stride, kernel / 2, groups)?;
    let fan_in = (cin / groups * kernel * kernel) as f32;
    let bound = gain * (3.0 / fan_in).sqrt();
    w.weight.data_mut().iter_mut().for_each(|v| *v = uniform(rng, bound));
    Ok(ConvScaleParams::unit(w))
}

const RELU_GAIN: f32 = std::f32::consts::SQRT_2;
const RESIDUAL_GAIN: f32 = 0.5;

fn conv_geometry(op: &LayerOp) -> Option<(usize, usize, usize, bool)> {
    match op {
        LayerOp::Conv {
            kernel,
            stride,
            groups,
            relu,
            ..
        } => Some((*kernel, *stride, *groups, *relu)),
        _ => None,
    }
}

impl Network {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        init_weights(&build_model(cfg)?, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.graph.config
    }

    /// Writes weights (and the config) into `store` under `prefix`.
    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        for (k, v) in self.config().to_kv() {
            store.set_config(format!("{prefix}{k}"), v)?;
        }
        let scaled = self.config().scales.conv_scales();
        for (node, p) in self.graph.nodes.iter().zip(&self.params) {
            let base = format!("{prefix}{}", node.name);
            match p {
                NodeParams::None => {}
                NodeParams::Conv(c) => save_conv(store, &base, c, scaled)?,
                NodeParams::Block(b) => {
                    save_conv(store, &format!("{base}.conv3x3"), &b.conv3x3, scaled)?;
                    save_conv(store, &format!("{base}.expand"), &b.expand, scaled)?;
                    save_conv(store, &format!("{base}.project"), &b.project, scaled)?;
                }
                NodeParams::Spatial(s) => {
                    store.insert_f32(format!("{base}.gamma"), vec![s.gamma.len()], s.gamma.clone())?
                }
            }
        }
        Ok(())
    }

    /// Reads the config and weights stored under `prefix`.
    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let scoped = store.scoped(prefix);
        let cfg = ModelConfig::from_kv(&scoped.config)?;
        let graph = build_model(&cfg)?;
        let scaled = cfg.scales.conv_scales();
        let mut params = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let p = match &node.op {
                LayerOp::Conv { .. } => {
                    let (k, s, g, _) = conv_geometry(&node.op).unwrap();
                    NodeParams::Conv(load_conv(
                        &scoped,
                        &node.name,
                        node.in_channels,
                        node.out_channels,
                        k,
                        s,
                        g,
                        scaled,
                    )?)
                }
                LayerOp::Block { spec, .. } => {
                    let mut b = Block311::zeros(*spec)?;
                    let (c, h3, h1) = (spec.channels, spec.hidden_3x3(), spec.hidden_1x1());
                    b.conv3x3 = load_conv(&scoped, &format!("{}.conv3x3", node.name), c, h3, 3, 1, spec.groups(), scaled)?;
                    b.expand = load_conv(&scoped, &format!("{}.expand", node.name), h3, h1, 1, 1, 1, scaled)?;
                    b.project = load_conv(&scoped, &format!("{}.project", node.name), h1, c, 1, 1, 1, scaled)?;
                    NodeParams::Block(b)
                }
                LayerOp::SpatialScale => {
                    let g = scoped.get_f32(&format!("{}.gamma", node.name), &[node.out_channels])?;
                    NodeParams::Spatial(SpatialScale { gamma: g.to_vec() })
                }
                _ => NodeParams::None,
            };
            params.push(p);
        }
        Ok(Self { graph, params })
    }

    /// Training-form forward pass with explicit Haar transforms and scales.
    pub fn forward(&self, x: &Tensor, level: Option<&[f32]>) -> Result<Outputs> {
        check_input(&self.graph, x)?;
        let mut h = x.clone();
        let (mut y, mut z) = (None, None);
        for (node, p) in self.graph.nodes.iter().zip(&self.params) {
            h = match (&node.op, p) {
                (LayerOp::ConcatLevel { channels }, _) => concat_level(&h, *channels, level)?,
                (LayerOp::Conv { relu, .. }, NodeParams::Conv(c)) => {
                    let mut o = convscale_forward(&h, c)?;
                    if *relu {
                        o.relu_inplace();
                    }
                    o
                }
                (LayerOp::Reshuffle(op), _) => reshuffle(&h, *op)?,
                (LayerOp::Block { spec, .. }, NodeParams::Block(b)) => convscale311_forward(&h, spec, b)?,
                (LayerOp::SpatialScale, NodeParams::Spatial(s)) => s.apply(&h)?,
                (LayerOp::Emit(tap), _) => {
                    match tap {
                        Tap::Y => y = Some(h.clone()),
                        Tap::Z => z = Some(h.clone()),
                    }
                    h
                }
                _ => return Err(invalid(format!("layer {} has mismatched parameters", node.name))),
            };
        }
        Ok(Outputs { y, z, out: h })
    }

    /// Inference form: scales folded into weights and Haar transforms folded
    /// into the adjacent 1x1 convolutions.
    pub fn collapse(&self) -> Result<InferenceNet> {
        let mut ops = Vec::new();
        let nodes = &self.graph.nodes;
        let mut i = 0;
        while i < nodes.len() {
            let node = &nodes[i];
            let next = nodes.get(i + 1);
            match (&node.op, &self.params[i]) {
                (LayerOp::Reshuffle(ReshuffleOp::HaarDown), _)
                    if matches!(self.params.get(i + 1), Some(NodeParams::Conv(c)) if is_plain_1x1(c)) =>
                {
                    let NodeParams::Conv(c) = &self.params[i + 1] else { unreachable!() };
                    let (_, _, _, relu) = conv_geometry(&next.unwrap().op).unwrap();
                    let col = haar_collapse_into_conv(Direction::Down, &convscale_collapse(c))?;
                    ops.push(InferenceOp::SpaceToDepth);
                    ops.push(InferenceOp::Conv { w: col.conv, relu });
                    i += 2;
                    continue;
                }
                (LayerOp::Conv { relu: false, .. }, NodeParams::Conv(c))
                    if is_plain_1x1(c)
                        && matches!(next.map(|n| &n.op), Some(LayerOp::Reshuffle(ReshuffleOp::HaarUp))) =>
                {
                    let col = haar_collapse_into_conv(Direction::Up, &convscale_collapse(c))?;
                    debug_assert_eq!(col.reshuffle, Reshuffle::DepthToSpaceAfter);
                    ops.push(InferenceOp::Conv {
                        w: col.conv,
                        relu: false,
                    });
                    ops.push(InferenceOp::DepthToSpace);
                    i += 2;
                    continue;
                }
                (LayerOp::ConcatLevel { channels }, _) => ops.push(InferenceOp::ConcatLevel(*channels)),
                (LayerOp::Conv { relu, .. }, NodeParams::Conv(c)) => ops.push(InferenceOp::Conv {
                    w: convscale_collapse(c),
                    relu: *relu,
                }),
                (LayerOp::Reshuffle(op), _) => ops.push(match op {
                    ReshuffleOp::HaarDown => InferenceOp::HaarDown,
                    ReshuffleOp::HaarUp => InferenceOp::HaarUp,
                    ReshuffleOp::SpaceToDepth => InferenceOp::SpaceToDepth,
                    ReshuffleOp::DepthToSpace => InferenceOp::DepthToSpace,
                }),
                (LayerOp::Block { .. }, NodeParams::Block(b)) => ops.push(InferenceOp::Block(b.collapse())),
                (LayerOp::SpatialScale, NodeParams::Spatial(s)) => ops.push(InferenceOp::Scale(s.gamma.clone())),
                (LayerOp::Emit(t), _) => ops.push(InferenceOp::Emit(*t)),
                _ => return Err(invalid(format!("layer {} has mismatched parameters", node.name))),
            }
            i += 1;
        }
        Ok(InferenceNet {
            graph: self.graph.clone(),
            ops,
        })
    }
}

fn is_plain_1x1(c: &ConvScaleParams) -> bool {
    c.base.kernel() == (1, 1) && c.base.stride == 1 && c.base.groups == 1
}

fn check_input(g: &ModelGraph, x: &Tensor) -> Result<()> {
    if x.shape().c != g.input_channels {
        return Err(shape(format!(
            "{} expects {} input channels, got {}",
            g.config.role,
            g.input_channels,
            x.shape().c
        )));
    }
    Ok(())
}

fn reshuffle(h: &Tensor, op: ReshuffleOp) -> Result<Tensor> {
    match op {
        ReshuffleOp::HaarDown => haar_resample(h, Direction::Down),
        ReshuffleOp::HaarUp => haar_resample(h, Direction::Up),
        ReshuffleOp::SpaceToDepth => space_to_depth(h, 2),
        ReshuffleOp::DepthToSpace => depth_to_space(h, 2),
    }
}

fn concat_level(h: &Tensor, channels: usize, level: Option<&[f32]>) -> Result<Tensor> {
    let level = level.ok_or_else(|| invalid("network needs a level embedding"))?;
    if level.len() != channels {
        return Err(shape(format!("level embedding has {} entries, expected {channels}", level.len())));
    }
    let s = h.shape();
    let planes = Tensor::from_fn(Shape::new(s.n, channels, s.h, s.w), |_, c, _, _| level[c]);
    Tensor::concat_channels(&[h, &planes])
}

fn save_conv(store: &mut WeightStore, base: &str, c: &ConvScaleParams, scaled: bool) -> Result<()> {
    let s = c.base.weight.shape();
    store.insert_f32(format!("{base}.weight"), vec![s.n, s.c, s.h, s.w], c.base.weight.data().to_vec())?;
    store.insert_f32(format!("{base}.bias"), vec![c.base.bias.len()], c.base.bias.clone())?;
    if scaled {
        store.insert_f32(format!("{base}.s_in"), vec![c.s_in.len()], c.s_in.clone())?;
        store.insert_f32(format!("{base}.s_out"), vec![c.s_out.len()], c.s_out.clone())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn load_conv(
    store: &WeightStore,
    base: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    scaled: bool,
) -> Result<ConvScaleParams> {
    let cpg = cin / groups;
    let w = store.get_f32(&format!("{base}.weight"), &[cout, cpg, kernel, kernel])?;
    let b = store.get_f32(&format!("{base}.bias"), &[cout])?;
    let base_w = ConvWeights::new(
        Tensor::from_vec(Shape::new(cout, cpg, kernel, kernel), w.to_vec())?,
        b.to_vec(),
        stride,
        kernel / 2,
        groups,
    )?;
    if scaled {
        let s_in = store.get_f32(&format!("{base}.s_in"), &[cpg])?.to_vec();
        let s_out = store.get_f32(&format!("{base}.s_out"), &[cout])?.to_vec();
        ConvScaleParams::new(base_w, s_in, s_out)
    } else {
        Ok(ConvScaleParams::unit(base_w))
    }
}

/// Fan-in scaled uniform initialisation from an integer-seeded generator.
/// All learned scales start at one and all biases at zero, except the scale
/// head whose bias points at a mid-table index.
pub fn init_weights(g: &ModelGraph, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let p = match &node.op {
            LayerOp::Conv {
                kernel,
                stride,
                groups,
                relu,
                ..
            } => {
                let gain = if *relu { RELU_GAIN } else { 1.0 };
                let mut c = random_conv(&mut rng, node.in_channels, node.out_channels, *kernel, *stride, *groups, gain)?;
                if g.config.role == Role::ScaleDecoder && node.name == "head" {
                    c.base.weight.data_mut().iter_mut().for_each(|w| *w *= 0.25);
                    c.base.bias.iter_mut().for_each(|b| *b = INIT_SCALE_INDEX);
                }
                NodeParams::Conv(c)
            }
            LayerOp::Block { spec, .. } => {
                let (c, h3, h1) = (spec.channels, spec.hidden_3x3(), spec.hidden_1x1());
                NodeParams::Block(Block311 {
                    spec: *spec,
                    conv3x3: random_conv(&mut rng, c, h3, 3, 1, spec.groups(), RELU_GAIN)?,
                    expand: random_conv(&mut rng, h3, h1, 1, 1, 1, RELU_GAIN)?,
                    project: random_conv(&mut rng, h1, c, 1, 1, 1, RESIDUAL_GAIN)?,
                })
            }
            LayerOp::SpatialScale => NodeParams::Spatial(SpatialScale::ones(node.out_channels)),
            _ => NodeParams::None,
        };
        params.push(p);
    }
    Ok(Network {
        graph: g.clone(),
        params,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum InferenceOp {
    ConcatLevel(usize),
    Conv { w: ConvWeights, relu: bool },
    SpaceToDepth,
    DepthToSpace,
    HaarDown,
    HaarUp,
    Block(CollapsedBlock),
    Scale(Vec<f32>),
    Emit(Tap),
}

/// Collapsed network: plain convolutions and reshuffles only.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceNet {
    pub graph: ModelGraph,
    pub ops: Vec<InferenceOp>,
}

impl InferenceNet {
    pub fn config(&self) -> &ModelConfig {
        &self.graph.config
    }

    pub fn forward(&self, x: &Tensor, level: Option<&[f32]>) -> Result<Outputs> {
        check_input(&self.graph, x)?;
        let mut h = x.clone();
        let (mut y, mut z) = (None, None);
        for op in &self.ops {
            h = match op {
                InferenceOp::ConcatLevel(c) => concat_level(&h, *c, level)?,
                InferenceOp::Conv { w, relu } => {
                    let mut o = conv2d(&h, w)?;
                    if *relu {
                        o.relu_inplace();
                    }
                    o
                }
                InferenceOp::SpaceToDepth => space_to_depth(&h, 2)?,
                InferenceOp::DepthToSpace => depth_to_space(&h, 2)?,
                InferenceOp::HaarDown => haar_resample(&h, Direction::Down)?,
                InferenceOp::HaarUp => haar_resample(&h, Direction::Up)?,
                InferenceOp::Block(b) => b.forward(&h)?,
                InferenceOp::Scale(g) => {
                    h.scale_channels(g)?;
                    h
                }
                InferenceOp::Emit(tap) => {
                    match tap {
                        Tap::Y => y = Some(h.clone()),
                        Tap::Z => z = Some(h.clone()),
                    }
                    h
                }
            };
        }
        Ok(Outputs { y, z, out: h })
    }

    pub fn kmacs_per_pixel(&self) -> f64 {
        crate::model::count_macs_per_pixel(&self.graph)
    }
}
