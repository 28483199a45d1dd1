//! Calibrated 8-bit scale decoder and its optimised integer executor.

use rayon::prelude::*;

use crate::error::{config, invalid, shape, Result};
use crate::model::{InferenceNet, InferenceOp, ModelConfig, Network, Role, TensorData, WeightStore};
use crate::quant::fixed::{Multiplier, QuantParams, SCALE_FLOOR};
use crate::tensor::{conv2d, depth_to_space, ConvWeights, Shape, Tensor};

/// Weight zero point; weights occupy `[1, 255]`.
pub const WEIGHT_ZERO_POINT: i32 = 128;

/// ẑ enters the network as `clamp(ẑ, -128, 127) + 128` with unit scale.
pub const INPUT_PARAMS: QuantParams = QuantParams {
    scale: 1.0,
    zero_point: 128,
};

/// The head emits scale-table indices in quarter steps.
pub const HEAD_PARAMS: QuantParams = QuantParams {
    scale: 0.25,
    zero_point: 0,
};

pub const MAX_SCALE_INDEX: u8 = 63;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// `[K, C/G, k, k]`, zero point [`WEIGHT_ZERO_POINT`].
    pub qweights: Vec<u8>,
    pub weight_scales: Vec<f32>,
    pub qbias: Vec<i32>,
    pub requant: Vec<Multiplier>,
    pub input: QuantParams,
    pub output: QuantParams,
    pub relu: bool,
}

impl QuantizedConv {
    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn taps(&self) -> usize {
        self.in_per_group() * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    /// Largest accumulator magnitude reachable from any 8-bit input.
    pub fn accumulator_bound(&self) -> i64 {
        let zx = self.input.zero_point as i64;
        let span = zx.max(255 - zx);
        (0..self.out_channels)
            .map(|k| {
                let w = &self.qweights[k * self.taps()..(k + 1) * self.taps()];
                let s: i64 = w.iter().map(|&q| (q as i64 - WEIGHT_ZERO_POINT as i64).abs() * span).sum();
                s + (self.qbias[k] as i64).abs()
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedAdd {
    pub a: QuantParams,
    pub b: QuantParams,
    pub output: QuantParams,
    pub ma: Multiplier,
    pub mb: Multiplier,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuantizedLayer {
    Conv(QuantizedConv),
    DepthToSpace,
    /// Pushes the current activation for a later residual add.
    SaveResidual,
    /// Pops the saved activation and adds it to the current one.
    AddResidual(QuantizedAdd),
}

/// Integer-only scale decoder: ẑ in, scale-table indices out.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub layers: Vec<QuantizedLayer>,
    pub input: QuantParams,
    pub output: QuantParams,
}

/// Float op list with spatial scales folded into the following conv.
#[derive(Clone, Debug)]
pub(crate) enum FloatOp {
    Conv(ConvWeights, bool),
    DepthToSpace,
    Save,
    Add,
}

pub(crate) fn float_ops(net: &InferenceNet) -> Result<Vec<FloatOp>> {
    let mut ops = Vec::new();
    let mut pending: Option<Vec<f32>> = None;
    let take_gamma = |w: &ConvWeights, pending: &mut Option<Vec<f32>>| -> Result<ConvWeights> {
        let Some(g) = pending.take() else { return Ok(w.clone()) };
        if w.groups != 1 {
            return Err(invalid("spatial scale must precede an ungrouped convolution"));
        }
        let mut w = w.clone();
        let s = w.weight.shape();
        let plane = s.h * s.w;
        for k in 0..s.n {
            for c in 0..s.c {
                let o = (k * s.c + c) * plane;
                w.weight.data_mut()[o..o + plane].iter_mut().for_each(|v| *v *= g[c]);
            }
        }
        Ok(w)
    };
    for op in &net.ops {
        match op {
            InferenceOp::Conv { w, relu } => ops.push(FloatOp::Conv(take_gamma(w, &mut pending)?, *relu)),
            InferenceOp::DepthToSpace => {
                if pending.is_some() {
                    return Err(invalid("spatial scale before a reshuffle is not supported"));
                }
                ops.push(FloatOp::DepthToSpace)
            }
            InferenceOp::Block(b) => {
                if pending.is_some() {
                    return Err(invalid("spatial scale before a residual block is not supported"));
                }
                ops.push(FloatOp::Save);
                ops.push(FloatOp::Conv(b.convs[0].clone(), true));
                ops.push(FloatOp::Conv(b.convs[1].clone(), true));
                ops.push(FloatOp::Conv(b.convs[2].clone(), false));
                ops.push(FloatOp::Add);
            }
            InferenceOp::Scale(g) => {
                pending = Some(match pending.take() {
                    Some(p) => p.iter().zip(g).map(|(a, b)| a * b).collect(),
                    None => g.clone(),
                })
            }
            other => return Err(invalid(format!("{other:?} cannot run in the integer path"))),
        }
    }
    if pending.is_some() {
        return Err(invalid("trailing spatial scale has no convolution to fold into"));
    }
    Ok(ops)
}

/// Runs the float op list, reporting each produced activation's range.
pub(crate) fn float_forward(ops: &[FloatOp], x: &Tensor, mut observe: impl FnMut(usize, &Tensor)) -> Result<Tensor> {
    let mut h = x.clone();
    let mut saved = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        h = match op {
            FloatOp::Conv(w, relu) => {
                let mut o = conv2d(&h, w)?;
                if *relu {
                    o.relu_inplace();
                }
                o
            }
            FloatOp::DepthToSpace => depth_to_space(&h, 2)?,
            FloatOp::Save => {
                saved.push(h.clone());
                h
            }
            FloatOp::Add => {
                let mut o = h;
                o.add_assign(&saved.pop().ok_or_else(|| invalid("unbalanced residual"))?)?;
                o
            }
        };
        observe(i, &h);
    }
    Ok(h)
}

fn quantize_conv(w: &ConvWeights, relu: bool, input: QuantParams, output: QuantParams) -> Result<QuantizedConv> {
    let (ky, kx) = w.kernel();
    if ky != kx {
        return Err(invalid("only square kernels are supported"));
    }
    let k_out = w.out_channels();
    let taps = w.in_per_group() * ky * kx;
    let mut qweights = Vec::with_capacity(k_out * taps);
    let mut weight_scales = Vec::with_capacity(k_out);
    let mut qbias = Vec::with_capacity(k_out);
    let mut requant = Vec::with_capacity(k_out);
    for k in 0..k_out {
        let row = &w.weight.data()[k * taps..(k + 1) * taps];
        let max = row.iter().fold(0f32, |m, v| m.max(v.abs()));
        let mut sw = max / 127.0;
        if !(sw >= SCALE_FLOOR) {
            log::warn!("output channel {k} has an all-zero weight row, using scale floor");
            sw = SCALE_FLOOR;
        }
        qweights.extend(
            row.iter()
                .map(|&v| ((v / sw).round() as i32 + WEIGHT_ZERO_POINT).clamp(1, 255) as u8),
        );
        let acc_scale = input.scale as f64 * sw as f64;
        let b = (w.bias[k] as f64 / acc_scale).round();
        qbias.push(b.clamp(i32::MIN as f64, i32::MAX as f64) as i32);
        requant.push(Multiplier::from_ratio(acc_scale / output.scale as f64)?);
        weight_scales.push(sw);
    }
    let q = QuantizedConv {
        in_channels: w.in_channels(),
        out_channels: k_out,
        kernel: ky,
        stride: w.stride,
        padding: w.padding,
        groups: w.groups,
        qweights,
        weight_scales,
        qbias,
        requant,
        input,
        output,
        relu,
    };
    let bound = q.accumulator_bound();
    if bound > i32::MAX as i64 {
        return Err(invalid(format!("accumulator bound {bound} exceeds 32 bits")));
    }
    Ok(q)
}

/// Calibrates activation ranges on `calibration` (hyper-latent tensors,
/// already rounded) and converts the scale decoder to integer form.
pub fn quantize_model(net: &Network, calibration: &[Tensor]) -> Result<QuantizedModel> {
    if net.config().role != Role::ScaleDecoder {
        return Err(config("role", "only the scale decoder is quantised"));
    }
    if calibration.is_empty() {
        return Err(invalid("calibration set is empty"));
    }
    let ops = float_ops(&net.collapse()?)?;
    let mut lo = vec![f32::INFINITY; ops.len()];
    let mut hi = vec![f32::NEG_INFINITY; ops.len()];
    for z in calibration {
        let z = z.map(|v| v.clamp(-128.0, 127.0));
        float_forward(&ops, &z, |i, t| {
            for &v in t.data() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        })?;
    }
    let mut layers = Vec::with_capacity(ops.len());
    let mut current = INPUT_PARAMS;
    let mut saved = Vec::new();
    let last_conv = ops.iter().rposition(|o| matches!(o, FloatOp::Conv(..)));
    for (i, op) in ops.iter().enumerate() {
        match op {
            FloatOp::Conv(w, relu) => {
                let out = if Some(i) == last_conv {
                    HEAD_PARAMS
                } else {
                    QuantParams::from_range(lo[i], hi[i])
                };
                layers.push(QuantizedLayer::Conv(quantize_conv(w, *relu, current, out)?));
                current = out;
            }
            FloatOp::DepthToSpace => layers.push(QuantizedLayer::DepthToSpace),
            FloatOp::Save => {
                saved.push(current);
                layers.push(QuantizedLayer::SaveResidual);
            }
            FloatOp::Add => {
                let a = saved.pop().ok_or_else(|| invalid("unbalanced residual"))?;
                let out = QuantParams::from_range(lo[i], hi[i]);
                layers.push(QuantizedLayer::AddResidual(QuantizedAdd {
                    a,
                    b: current,
                    output: out,
                    ma: Multiplier::from_ratio(a.scale as f64 / out.scale as f64)?,
                    mb: Multiplier::from_ratio(current.scale as f64 / out.scale as f64)?,
                }));
                current = out;
            }
        }
    }
    Ok(QuantizedModel {
        config: net.config().clone(),
        layers,
        input: INPUT_PARAMS,
        output: current,
    })
}

/// An 8-bit activation tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedTensor {
    pub shape: Shape,
    pub data: Vec<u8>,
}

/// Maps rounded ẑ to the network's input codes.
pub fn quantize_input(shape: Shape, z_hat: &[i32]) -> Result<QuantizedTensor> {
    if shape.numel() != z_hat.len() {
        return Err(crate::error::shape(format!("{} values for shape {shape}", z_hat.len())));
    }
    let data = z_hat
        .iter()
        .map(|&v| (v.clamp(-128, 127) + INPUT_PARAMS.zero_point) as u8)
        .collect();
    Ok(QuantizedTensor { shape, data })
}

/// Head code to scale-table index: `round(q / 4)`, capped at 63.
#[inline]
pub fn head_to_index(q: u8) -> u8 {
    ((q as u32 + 2) >> 2).min(MAX_SCALE_INDEX as u32) as u8
}

/// Optimised integer convolution; output channels run in parallel.
pub fn integer_conv(x: &QuantizedTensor, l: &QuantizedConv) -> Result<QuantizedTensor> {
    let s = x.shape;
    if s.c != l.in_channels {
        return Err(shape(format!("conv expects {} channels, got {}", l.in_channels, s.c)));
    }
    if s.h + 2 * l.padding < l.kernel || s.w + 2 * l.padding < l.kernel {
        return Err(shape("input smaller than kernel"));
    }
    let (oh, ow) = l.output_hw(s.h, s.w);
    let out_shape = Shape::new(s.n, l.out_channels, oh, ow);
    let cpg = l.in_per_group();
    let kpg = l.out_channels / l.groups;
    let zx = l.input.zero_point;
    let taps = l.taps();
    let k2 = l.kernel * l.kernel;
    let plane_in = s.h * s.w;
    let plane_out = oh * ow;
    let centred: Vec<i32> = x.data.iter().map(|&q| q as i32 - zx).collect();
    let mut out = vec![0u8; out_shape.numel()];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, dst)| {
        let (n, k) = (idx / l.out_channels, idx % l.out_channels);
        let g = k / kpg;
        let wrow = &l.qweights[k * taps..(k + 1) * taps];
        let mut acc = vec![l.qbias[k]; plane_out];
        for ci in 0..cpg {
            let src = &centred[(n * s.c + g * cpg + ci) * plane_in..][..plane_in];
            for ky in 0..l.kernel {
                for kx in 0..l.kernel {
                    let wv = wrow[ci * k2 + ky * l.kernel + kx] as i32 - WEIGHT_ZERO_POINT;
                    if wv == 0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * l.stride + ky) as isize - l.padding as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * s.w..][..s.w];
                        let arow = &mut acc[oy * ow..][..ow];
                        for (ox, a) in arow.iter_mut().enumerate() {
                            let ix = (ox * l.stride + kx) as isize - l.padding as isize;
                            if ix >= 0 && ix < s.w as isize {
                                *a += srow[ix as usize] * wv;
                            }
                        }
                    }
                }
            }
        }
        let zo = l.output.zero_point as i64;
        let floor = if l.relu { zo } else { 0 };
        for (d, &a) in dst.iter_mut().zip(&acc) {
            *d = (l.requant[k].apply(a) + zo).clamp(floor, 255) as u8;
        }
    });
    Ok(QuantizedTensor { shape: out_shape, data: out })
}

pub fn integer_add(a: &QuantizedTensor, b: &QuantizedTensor, p: &QuantizedAdd) -> Result<QuantizedTensor> {
    if a.shape != b.shape {
        return Err(shape(format!("residual {} vs {}", a.shape, b.shape)));
    }
    let (za, zb, zo) = (p.a.zero_point, p.b.zero_point, p.output.zero_point as i64);
    let data = a
        .data
        .par_iter()
        .zip(&b.data)
        .map(|(&qa, &qb)| {
            let v = p.ma.apply(qa as i32 - za) + p.mb.apply(qb as i32 - zb) + zo;
            v.clamp(0, 255) as u8
        })
        .collect();
    Ok(QuantizedTensor { shape: a.shape, data })
}

fn depth_to_space_u8(x: &QuantizedTensor) -> Result<QuantizedTensor> {
    let t = Tensor::from_vec(x.shape, x.data.iter().map(|&q| q as f32).collect())?;
    let o = depth_to_space(&t, 2)?;
    Ok(QuantizedTensor {
        shape: o.shape(),
        data: o.data().iter().map(|&v| v as u8).collect(),
    })
}

impl QuantizedModel {
    /// Runs every layer; returns the head's 8-bit codes.
    pub fn forward(&self, x: QuantizedTensor) -> Result<QuantizedTensor> {
        let mut h = x;
        let mut saved = Vec::new();
        for l in &self.layers {
            h = match l {
                QuantizedLayer::Conv(c) => integer_conv(&h, c)?,
                QuantizedLayer::DepthToSpace => depth_to_space_u8(&h)?,
                QuantizedLayer::SaveResidual => {
                    saved.push(h.clone());
                    h
                }
                QuantizedLayer::AddResidual(p) => {
                    let a = saved.pop().ok_or_else(|| invalid("unbalanced residual"))?;
                    integer_add(&a, &h, p)?
                }
            };
        }
        Ok(h)
    }

    /// Scale-table index per latent element for the rounded hyper-latent.
    pub fn run_scale_decoder(&self, shape: Shape, z_hat: &[i32]) -> Result<Vec<u8>> {
        if shape.c != self.config.hyper_channels {
            return Err(crate::error::shape(format!(
                "scale decoder expects {} channels, got {}",
                self.config.hyper_channels, shape.c
            )));
        }
        let out = self.forward(quantize_input(shape, z_hat)?)?;
        Ok(out.data.iter().map(|&q| head_to_index(q)).collect())
    }

    /// Output shape for a hyper-latent of the given shape.
    pub fn output_shape(&self, z: Shape) -> Shape {
        Shape::new(z.n, self.config.latent_channels, z.h * 4, z.w * 4)
    }

    /// Largest accumulator magnitude over all conv layers.
    pub fn accumulator_bound(&self) -> i64 {
        self.layers
            .iter()
            .filter_map(|l| match l {
                QuantizedLayer::Conv(c) => Some(c.accumulator_bound()),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        for (k, v) in self.config.to_kv() {
            store.set_config(format!("{prefix}{k}"), v)?;
        }
        let mut kinds = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let base = format!("{prefix}layer{i:02}");
            match l {
                QuantizedLayer::Conv(c) => {
                    kinds.push(format!("conv:{}:{}:{}:{}", c.kernel, c.stride, c.padding, c.groups));
                    let cpg = c.in_per_group();
                    store.insert(
                        format!("{base}.qweight"),
                        vec![c.out_channels, cpg, c.kernel, c.kernel],
                        TensorData::U8(c.qweights.clone()),
                    )?;
                    store.insert_f32(format!("{base}.weight_scale"), vec![c.out_channels], c.weight_scales.clone())?;
                    store.insert(format!("{base}.qbias"), vec![c.out_channels], TensorData::I32(c.qbias.clone()))?;
                    store.insert(
                        format!("{base}.requant"),
                        vec![c.out_channels, 2],
                        TensorData::I32(c.requant.iter().flat_map(|m| [m.m, m.shift as i32]).collect()),
                    )?;
                    save_params(store, &format!("{base}.in"), c.input)?;
                    save_params(store, &format!("{base}.out"), c.output)?;
                    store.set_config(format!("{base}.relu"), c.relu.to_string())?;
                }
                QuantizedLayer::DepthToSpace => kinds.push("d2s".into()),
                QuantizedLayer::SaveResidual => kinds.push("save".into()),
                QuantizedLayer::AddResidual(p) => {
                    kinds.push("add".into());
                    save_params(store, &format!("{base}.a"), p.a)?;
                    save_params(store, &format!("{base}.b"), p.b)?;
                    save_params(store, &format!("{base}.out"), p.output)?;
                    store.insert(
                        format!("{base}.requant"),
                        vec![2, 2],
                        TensorData::I32(vec![p.ma.m, p.ma.shift as i32, p.mb.m, p.mb.shift as i32]),
                    )?;
                }
            }
        }
        store.set_config(format!("{prefix}layers"), kinds.join(","))?;
        save_params(store, &format!("{prefix}output"), self.output)
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let scoped = store.scoped(prefix);
        let cfg = ModelConfig::from_kv(&scoped.config)?;
        let kinds = scoped.config_value("layers")?;
        let mut layers = Vec::new();
        for (i, kind) in kinds.split(',').filter(|k| !k.is_empty()).enumerate() {
            let base = format!("layer{i:02}");
            let layer = match kind {
                "d2s" => QuantizedLayer::DepthToSpace,
                "save" => QuantizedLayer::SaveResidual,
                "add" => {
                    let r = i32s(&scoped, &format!("{base}.requant"), 4)?;
                    QuantizedLayer::AddResidual(QuantizedAdd {
                        a: load_params(&scoped, &format!("{base}.a"))?,
                        b: load_params(&scoped, &format!("{base}.b"))?,
                        output: load_params(&scoped, &format!("{base}.out"))?,
                        ma: multiplier(r[0], r[1])?,
                        mb: multiplier(r[2], r[3])?,
                    })
                }
                k if k.starts_with("conv:") => QuantizedLayer::Conv(load_conv(&scoped, &base, k)?),
                other => return Err(config("layers", format!("unknown layer kind `{other}`"))),
            };
            layers.push(layer);
        }
        Ok(Self {
            config: cfg,
            layers,
            input: INPUT_PARAMS,
            output: load_params(&scoped, "output")?,
        })
    }
}

fn save_params(store: &mut WeightStore, key: &str, p: QuantParams) -> Result<()> {
    store.set_config(format!("{key}.scale"), format!("{:08x}", p.scale.to_bits()))?;
    store.set_config(format!("{key}.zero_point"), p.zero_point.to_string())
}

fn load_params(store: &WeightStore, key: &str) -> Result<QuantParams> {
    let bits = u32::from_str_radix(store.config_value(&format!("{key}.scale"))?, 16)
        .map_err(|_| config(format!("{key}.scale"), "not a hex bit pattern"))?;
    let zp = store
        .config_value(&format!("{key}.zero_point"))?
        .parse()
        .map_err(|_| config(format!("{key}.zero_point"), "not an integer"))?;
    QuantParams::new(f32::from_bits(bits), zp)
}

fn multiplier(m: i32, shift: i32) -> Result<Multiplier> {
    if m < (1 << 30) || !(0..64).contains(&shift) {
        return Err(config("requant", format!("multiplier ({m}, {shift}) not normalised")));
    }
    Ok(Multiplier { m, shift: shift as u32 })
}

fn i32s<'a>(store: &'a WeightStore, name: &str, len: usize) -> Result<&'a [i32]> {
    match &store.get(name)?.data {
        TensorData::I32(v) if v.len() == len => Ok(v),
        _ => Err(config(name, format!("expected {len} i32 values"))),
    }
}

fn load_conv(store: &WeightStore, base: &str, kind: &str) -> Result<QuantizedConv> {
    let geo: Vec<usize> = kind[5..]
        .split(':')
        .map(|v| v.parse().map_err(|_| config(base, "bad conv geometry")))
        .collect::<Result<_>>()?;
    let [kernel, stride, padding, groups] = geo[..] else {
        return Err(config(base, "bad conv geometry"));
    };
    let qw = store.get(&format!("{base}.qweight"))?;
    let TensorData::U8(qweights) = &qw.data else {
        return Err(config(base, "qweight must be u8"));
    };
    if qw.shape.len() != 4 || qw.shape[2] != kernel || qw.shape[3] != kernel {
        return Err(config(base, "qweight shape does not match geometry"));
    }
    let out_channels = qw.shape[0];
    let weight_scales = store.get_f32(&format!("{base}.weight_scale"), &[out_channels])?.to_vec();
    let qbias = i32s(store, &format!("{base}.qbias"), out_channels)?.to_vec();
    let r = i32s(store, &format!("{base}.requant"), 2 * out_channels)?;
    let requant = r.chunks(2).map(|p| multiplier(p[0], p[1])).collect::<Result<_>>()?;
    let relu = store.config_value(&format!("{base}.relu"))? == "true";
    Ok(QuantizedConv {
        in_channels: qw.shape[1] * groups,
        out_channels,
        kernel,
        stride,
        padding,
        groups,
        qweights: qweights.clone(),
        weight_scales,
        qbias,
        requant,
        input: load_params(store, &format!("{base}.in"))?,
        output: load_params(store, &format!("{base}.out"))?,
        relu,
    })
}
