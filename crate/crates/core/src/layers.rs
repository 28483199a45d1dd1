//! Building blocks of the backbone: ConvScale layers, Haar resampling with its
//! zero-cost collapse into a 1x1 convolution, ConvScale311 residual blocks and
//! per-resolution learned scales.

use crate::error::{invalid, shape, Result};
use crate::tensor::{conv2d, depth_to_space, space_to_depth, ConvWeights, Shape, Tensor};

/// Channels per group for every 3x3 convolution.
pub const CHANNELS_PER_GROUP: usize = 32;

/// A convolution with learned input and output scales.
///
/// The effective weight is `s_in[c] * s_out[k] * W[k, c, ..]` and the effective
/// bias is `s_out[k] * b[k]`, where `c` indexes the per-group input channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvScaleParams {
    pub base: ConvWeights,
    pub s_in: Vec<f32>,
    pub s_out: Vec<f32>,
}

impl ConvScaleParams {
    pub fn new(base: ConvWeights, s_in: Vec<f32>, s_out: Vec<f32>) -> Result<Self> {
        let p = Self { base, s_in, s_out };
        p.validate()?;
        Ok(p)
    }

    /// Unit scales around `base`.
    pub fn unit(base: ConvWeights) -> Self {
        let s_in = vec![1.0; base.in_per_group()];
        let s_out = vec![1.0; base.out_channels()];
        Self { base, s_in, s_out }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.s_in.len() != self.base.in_per_group() {
            return Err(shape(format!(
                "s_in has {} entries, expected {}",
                self.s_in.len(),
                self.base.in_per_group()
            )));
        }
        if self.s_out.len() != self.base.out_channels() {
            return Err(shape(format!(
                "s_out has {} entries, expected {}",
                self.s_out.len(),
                self.base.out_channels()
            )));
        }
        if self.s_in.iter().chain(&self.s_out).any(|s| !s.is_finite()) {
            return Err(invalid("non-finite ConvScale scale"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.base.param_count() + self.s_in.len() + self.s_out.len()
    }
}

/// Training-form ConvScale: scales the input channels, convolves with the
/// raw weight, then scales the outputs.
pub fn convscale_forward(x: &Tensor, p: &ConvScaleParams) -> Result<Tensor> {
    p.validate()?;
    let cpg = p.base.in_per_group();
    if x.shape().c != p.base.in_channels() {
        return Err(shape(format!(
            "input has {} channels, ConvScale expects {}",
            x.shape().c,
            p.base.in_channels()
        )));
    }
    let per_channel: Vec<f32> = (0..x.shape().c).map(|c| p.s_in[c % cpg]).collect();
    let mut scaled = x.clone();
    scaled.scale_channels(&per_channel)?;
    let mut y = conv2d(&scaled, &p.base)?;
    let plane = y.shape().plane();
    let k_total = p.base.out_channels();
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let k = i % k_total;
        let s = p.s_out[k];
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(y)
}

/// Folds the scales into a plain convolution with identical cost.
pub fn convscale_collapse(p: &ConvScaleParams) -> ConvWeights {
    let s = p.base.weight.shape();
    let mut out = p.base.clone();
    let per_k = s.c * s.h * s.w;
    let kk = s.h * s.w;
    for (k, wk) in out.weight.data_mut().chunks_mut(per_k).enumerate() {
        for (c, wc) in wk.chunks_mut(kk).enumerate() {
            let f = p.s_in[c] * p.s_out[k];
            wc.iter_mut().for_each(|w| *w *= f);
        }
    }
    for (b, s) in out.bias.iter_mut().zip(&p.s_out) {
        *b *= s;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Down,
    Up,
}

/// Haar analysis matrix (times 1/2), rows LL, LH, HL, HH; columns are the
/// 2x2 phases TL, TR, BL, BR.
const HAAR: [[f32; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

/// Orthonormal 2-D Haar transform on 2x2 blocks.
///
/// `Down` maps `(B, C, H, W)` to `(B, 4C, H/2, W/2)` with channel blocks
/// `[LL, LH, HL, HH]`; `Up` is its inverse. Round trips are bit-exact whenever
/// the block sums are representable (8-bit integer samples, k/256 grids).
pub fn haar_resample(x: &Tensor, direction: Direction) -> Result<Tensor> {
    let s = x.shape();
    match direction {
        Direction::Down => {
            if s.h % 2 != 0 || s.w % 2 != 0 {
                return Err(shape(format!("Haar down needs even dims, got {}x{}", s.h, s.w)));
            }
            let (oh, ow) = (s.h / 2, s.w / 2);
            let mut out = Tensor::zeros(Shape::new(s.n, 4 * s.c, oh, ow));
            let op = oh * ow;
            for b in 0..s.n {
                for c in 0..s.c {
                    let src = x.plane(b, c);
                    let mut bands = [vec![0.0f32; op], vec![0.0; op], vec![0.0; op], vec![0.0; op]];
                    for y in 0..oh {
                        for xx in 0..ow {
                            let i = 2 * y * s.w + 2 * xx;
                            let (a, bb, cc, d) = (src[i], src[i + 1], src[i + s.w], src[i + s.w + 1]);
                            let o = y * ow + xx;
                            bands[0][o] = ((a + bb) + (cc + d)) * 0.5;
                            bands[1][o] = ((a + bb) - (cc + d)) * 0.5;
                            bands[2][o] = ((a - bb) + (cc - d)) * 0.5;
                            bands[3][o] = ((a - bb) - (cc - d)) * 0.5;
                        }
                    }
                    for (j, band) in bands.iter().enumerate() {
                        out.plane_mut(b, j * s.c + c).copy_from_slice(band);
                    }
                }
            }
            Ok(out)
        }
        Direction::Up => {
            if s.c % 4 != 0 {
                return Err(shape(format!("Haar up needs channels divisible by 4, got {}", s.c)));
            }
            let c_out = s.c / 4;
            let (oh, ow) = (s.h * 2, s.w * 2);
            let mut out = Tensor::zeros(Shape::new(s.n, c_out, oh, ow));
            for b in 0..s.n {
                for c in 0..c_out {
                    let ll = x.plane(b, c).to_vec();
                    let lh = x.plane(b, c_out + c).to_vec();
                    let hl = x.plane(b, 2 * c_out + c).to_vec();
                    let hh = x.plane(b, 3 * c_out + c).to_vec();
                    let dst = out.plane_mut(b, c);
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            let i = y * s.w + xx;
                            let (p, q, r, t) = (ll[i], lh[i], hl[i], hh[i]);
                            let o = 2 * y * ow + 2 * xx;
                            dst[o] = ((p + q) + (r + t)) * 0.5;
                            dst[o + 1] = ((p + q) - (r + t)) * 0.5;
                            dst[o + ow] = ((p - q) + (r - t)) * 0.5;
                            dst[o + ow + 1] = ((p - q) - (r - t)) * 0.5;
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Pixel reshuffle accompanying a collapsed resampling convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reshuffle {
    /// `space_to_depth(2)` before the convolution.
    SpaceToDepthBefore,
    /// `depth_to_space(2)` after the convolution.
    DepthToSpaceAfter,
}

/// A resampling step in inference form: one reshuffle plus one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CollapsedResample {
    pub reshuffle: Reshuffle,
    pub conv: ConvWeights,
}

impl CollapsedResample {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self.reshuffle {
            Reshuffle::SpaceToDepthBefore => conv2d(&space_to_depth(x, 2)?, &self.conv),
            Reshuffle::DepthToSpaceAfter => depth_to_space(&conv2d(x, &self.conv)?, 2),
        }
    }
}

/// Folds a Haar transform into the adjacent 1x1 convolution.
///
/// * `Down`: `haar(down) -> c1x1` becomes `space_to_depth(2) -> conv'`.
/// * `Up`: `c1x1 -> haar(up)` becomes `conv' -> depth_to_space(2)`.
pub fn haar_collapse_into_conv(
    direction: Direction,
    c1x1: &ConvWeights,
) -> Result<CollapsedResample> {
    c1x1.validate()?;
    if c1x1.kernel() != (1, 1) || c1x1.stride != 1 || c1x1.padding != 0 || c1x1.groups != 1 {
        return Err(invalid("Haar collapse needs an ungrouped 1x1 stride-1 convolution"));
    }
    let k_total = c1x1.out_channels();
    let c_in = c1x1.in_channels();
    let w = c1x1.weight.data();
    match direction {
        Direction::Down => {
            if c_in % 4 != 0 {
                return Err(shape(format!("Haar down conv needs 4C inputs, got {c_in}")));
            }
            let c = c_in / 4;
            let mut out = vec![0.0f32; k_total * c_in];
            for k in 0..k_total {
                for p in 0..4 {
                    for ch in 0..c {
                        let mut acc = 0.0f32;
                        for (j, row) in HAAR.iter().enumerate() {
                            acc += w[k * c_in + j * c + ch] * row[p];
                        }
                        out[k * c_in + p * c + ch] = acc * 0.5;
                    }
                }
            }
            Ok(CollapsedResample {
                reshuffle: Reshuffle::SpaceToDepthBefore,
                conv: ConvWeights::new(
                    Tensor::from_vec(Shape::new(k_total, c_in, 1, 1), out)?,
                    c1x1.bias.clone(),
                    1,
                    0,
                    1,
                )?,
            })
        }
        Direction::Up => {
            if k_total % 4 != 0 {
                return Err(shape(format!("Haar up conv needs 4C outputs, got {k_total}")));
            }
            let c = k_total / 4;
            let mut out = vec![0.0f32; k_total * c_in];
            let mut bias = vec![0.0f32; k_total];
            for p in 0..4 {
                for ch in 0..c {
                    let dst = p * c + ch;
                    for ci in 0..c_in {
                        let mut acc = 0.0f32;
                        for (j, row) in HAAR.iter().enumerate() {
                            acc += row[p] * w[(j * c + ch) * c_in + ci];
                        }
                        out[dst * c_in + ci] = acc * 0.5;
                    }
                    let mut acc = 0.0f32;
                    for (j, row) in HAAR.iter().enumerate() {
                        acc += row[p] * c1x1.bias[j * c + ch];
                    }
                    bias[dst] = acc * 0.5;
                }
            }
            Ok(CollapsedResample {
                reshuffle: Reshuffle::DepthToSpaceAfter,
                conv: ConvWeights::new(
                    Tensor::from_vec(Shape::new(k_total, c_in, 1, 1), out)?,
                    bias,
                    1,
                    0,
                    1,
                )?,
            })
        }
    }
}

/// Hyperparameters of one ConvScale311 block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub channels: usize,
    /// Expansion of the grouped 3x3 convolution (E).
    pub expand_3x3: usize,
    /// Expansion of the middle 1x1 convolution (F).
    pub expand_1x1: usize,
}

impl BlockSpec {
    pub fn new(channels: usize, expand_3x3: usize, expand_1x1: usize) -> Result<Self> {
        let s = Self {
            channels,
            expand_3x3,
            expand_1x1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(invalid("block needs at least one channel"));
        }
        for (name, v) in [("E", self.expand_3x3), ("F", self.expand_1x1)] {
            if !(1..=4).contains(&v) {
                return Err(invalid(format!("expansion {name}={v} outside 1..=4")));
            }
        }
        if self.channels % self.groups() != 0 {
            return Err(invalid(format!(
                "{} channels cannot be split into {} groups",
                self.channels,
                self.groups()
            )));
        }
        Ok(())
    }

    /// Group count of the 3x3 convolution.
    pub fn groups(&self) -> usize {
        (self.channels / CHANNELS_PER_GROUP).max(1)
    }

    pub fn hidden_3x3(&self) -> usize {
        self.channels * self.expand_3x3
    }

    pub fn hidden_1x1(&self) -> usize {
        self.channels * self.expand_1x1
    }

    /// MACs per pixel at the block's own resolution.
    pub fn macs_per_pixel(&self) -> usize {
        let c = self.channels;
        self.hidden_3x3() * (c / self.groups()) * 9
            + self.hidden_3x3() * self.hidden_1x1()
            + self.hidden_1x1() * c
    }
}

/// Weights of one ConvScale311 block: grouped 3x3 expansion, 1x1 to F*C,
/// 1x1 back to C, residual add.
#[derive(Clone, Debug, PartialEq)]
pub struct Block311 {
    pub spec: BlockSpec,
    pub conv3x3: ConvScaleParams,
    pub expand: ConvScaleParams,
    pub project: ConvScaleParams,
}

impl Block311 {
    pub fn zeros(spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        Ok(Self {
            spec,
            conv3x3: ConvScaleParams::unit(ConvWeights::zeros(c, spec.hidden_3x3(), 3, 1, 1, spec.groups())?),
            expand: ConvScaleParams::unit(ConvWeights::zeros(spec.hidden_3x3(), spec.hidden_1x1(), 1, 1, 0, 1)?),
            project: ConvScaleParams::unit(ConvWeights::zeros(spec.hidden_1x1(), c, 1, 1, 0, 1)?),
        })
    }

    pub fn convs(&self) -> [&ConvScaleParams; 3] {
        [&self.conv3x3, &self.expand, &self.project]
    }

    pub fn convs_mut(&mut self) -> [&mut ConvScaleParams; 3] {
        [&mut self.conv3x3, &mut self.expand, &mut self.project]
    }

    pub fn collapse(&self) -> CollapsedBlock {
        CollapsedBlock {
            convs: [
                convscale_collapse(&self.conv3x3),
                convscale_collapse(&self.expand),
                convscale_collapse(&self.project),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.param_count()).sum()
    }
}

/// Inference form of [`Block311`].
#[derive(Clone, Debug, PartialEq)]
pub struct CollapsedBlock {
    pub convs: [ConvWeights; 3],
}

impl CollapsedBlock {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = conv2d(x, &self.convs[0])?;
        h.relu_inplace();
        let mut h = conv2d(&h, &self.convs[1])?;
        h.relu_inplace();
        let mut h = conv2d(&h, &self.convs[2])?;
        h.add_assign(x)?;
        Ok(h)
    }
}

/// Training-form ConvScale311 forward pass.
pub fn convscale311_forward(x: &Tensor, spec: &BlockSpec, weights: &Block311) -> Result<Tensor> {
    if weights.spec != *spec {
        return Err(invalid("block weights built for a different spec"));
    }
    if x.shape().c != spec.channels {
        return Err(shape(format!(
            "block expects {} channels, got {}",
            spec.channels,
            x.shape().c
        )));
    }
    let mut h = convscale_forward(x, &weights.conv3x3)?;
    h.relu_inplace();
    let mut h = convscale_forward(&h, &weights.expand)?;
    h.relu_inplace();
    let mut h = convscale_forward(&h, &weights.project)?;
    h.add_assign(x)?;
    Ok(h)
}

/// `blocks.len()` sequential ConvScale311 blocks. An empty chain is the
/// identity.
pub fn cs_chain_forward(x: &Tensor, spec: &BlockSpec, blocks: &[Block311]) -> Result<Tensor> {
    if blocks.is_empty() {
        log::debug!("empty CS-Chain at {} channels acts as identity", spec.channels);
        return Ok(x.clone());
    }
    let mut h = x.clone();
    for b in blocks {
        h = convscale311_forward(&h, spec, b)?;
    }
    Ok(h)
}

/// MACs per pixel of an `R`-block chain at its own resolution.
pub fn cs_chain_macs_per_pixel(spec: &BlockSpec, repeats: usize) -> usize {
    repeats * spec.macs_per_pixel()
}

/// Learned per-channel activation scale applied at the end of a resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialScale {
    pub gamma: Vec<f32>,
}

impl SpatialScale {
    pub fn ones(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        y.scale_channels(&self.gamma)?;
        Ok(y)
    }

    pub fn apply_inverse(&self, x: &Tensor) -> Result<Tensor> {
        if self.gamma.contains(&0.0) {
            return Err(invalid("zero spatial scale has no inverse"));
        }
        let inv: Vec<f32> = self.gamma.iter().map(|g| 1.0 / g).collect();
        let mut y = x.clone();
        y.scale_channels(&inv)?;
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_conv(cin: usize, cout: usize, k: usize, groups: usize, rng: &mut ChaCha8Rng) -> ConvWeights {
        let w = random(Shape::new(cout, cin / groups, k, k), rng);
        let b = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
        ConvWeights::new(w, b, 1, k / 2, groups).unwrap()
    }

    fn rel_diff(a: &Tensor, b: &Tensor) -> f32 {
        a.max_abs_diff(b).unwrap() / b.max_abs().max(1e-12)
    }

    #[test]
    fn unit_scales_are_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_conv(8, 6, 3, 2, &mut rng);
        let x = random(Shape::new(1, 8, 6, 6), &mut rng);
        let p = ConvScaleParams::unit(base.clone());
        assert_eq!(convscale_collapse(&p), base);
        assert!(convscale_forward(&x, &p).unwrap().max_abs_diff(&conv2d(&x, &base).unwrap()).unwrap() <= 1e-6);
    }

    #[test]
    fn doubled_output_scale_doubles_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut base = random_conv(4, 4, 1, 1, &mut rng);
        base.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = random(Shape::new(1, 4, 5, 5), &mut rng);
        let p = ConvScaleParams::new(base.clone(), vec![1.0; 4], vec![2.0; 4]).unwrap();
        let y = convscale_forward(&x, &p).unwrap();
        let y0 = conv2d(&x, &base).unwrap();
        assert_eq!(y, y0.map(|v| 2.0 * v));
    }

    #[test]
    fn random_scales_match_premultiplied_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let base = random_conv(8, 4, 3, 2, &mut rng);
            let s_in: Vec<f32> = (0..4).map(|_| rng.gen_range(0.2..2.0)).collect();
            let s_out: Vec<f32> = (0..4).map(|_| rng.gen_range(0.2..2.0)).collect();
            // oracle: explicitly premultiplied weight tensor
            let mut w = base.clone();
            for k in 0..4 {
                for c in 0..4 {
                    for y in 0..3 {
                        for xx in 0..3 {
                            let v = w.weight.at(k, c, y, xx) * s_in[c] * s_out[k];
                            w.weight.set(k, c, y, xx, v);
                        }
                    }
                }
                w.bias[k] *= s_out[k];
            }
            let p = ConvScaleParams::new(base, s_in, s_out).unwrap();
            let x = random(Shape::new(1, 8, 7, 7), &mut rng);
            let want = conv2d(&x, &w).unwrap();
            assert!(rel_diff(&convscale_forward(&x, &p).unwrap(), &want) <= 1e-6);
            assert!(rel_diff(&conv2d(&x, &convscale_collapse(&p)).unwrap(), &want) <= 1e-6);
        }
    }

    #[test]
    fn zero_input_scale_annihilates_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_conv(3, 2, 1, 1, &mut rng);
        let p = ConvScaleParams::new(base, vec![1.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let c = convscale_collapse(&p);
        assert_eq!(c.weight.at(0, 1, 0, 0), 0.0);
        assert_eq!(c.weight.at(1, 1, 0, 0), 0.0);
    }

    #[test]
    fn haar_dc_block() {
        let x = Tensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let y = haar_resample(&x, Direction::Down).unwrap();
        assert_eq!(y.data(), &[2.0, 0.0, 0.0, 0.0]);
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = haar_resample(&x, Direction::Down).unwrap();
        assert_eq!(y.data(), &[5.0, -2.0, -1.0, 0.0]);
    }

    #[test]
    fn haar_roundtrip_on_pixel_data_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(Shape::new(2, 3, 8, 10), |_, _, _, _| rng.gen_range(0..=255) as f32);
        let down = haar_resample(&x, Direction::Down).unwrap();
        assert_eq!(down.shape(), Shape::new(2, 12, 4, 5));
        assert_eq!(haar_resample(&down, Direction::Up).unwrap(), x);
    }

    #[test]
    fn haar_preserves_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(Shape::new(1, 4, 16, 16), &mut rng);
        let down = haar_resample(&x, Direction::Down).unwrap();
        let rel = (down.sum_sq() - x.sum_sq()).abs() / x.sum_sq();
        assert!(rel <= 1e-5);
        let back = haar_resample(&down, Direction::Up).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() <= 1e-6);
    }

    #[test]
    fn haar_rejects_bad_shapes() {
        assert!(haar_resample(&Tensor::zeros(Shape::new(1, 1, 3, 4)), Direction::Down).is_err());
        assert!(haar_resample(&Tensor::zeros(Shape::new(1, 6, 3, 4)), Direction::Up).is_err());
    }

    #[test]
    fn identity_collapse_gives_haar_rows() {
        let eye = Tensor::from_fn(Shape::new(4, 4, 1, 1), |k, c, _, _| (k == c) as u8 as f32);
        let conv = ConvWeights::new(eye, vec![0.0; 4], 1, 0, 1).unwrap();
        let col = haar_collapse_into_conv(Direction::Down, &conv).unwrap();
        assert_eq!(col.reshuffle, Reshuffle::SpaceToDepthBefore);
        for (j, row) in HAAR.iter().enumerate() {
            for p in 0..4 {
                assert_eq!(col.conv.weight.at(j, p, 0, 0), row[p] * 0.5);
            }
        }
    }

    #[test]
    fn collapsed_paths_match_explicit_haar() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(Shape::new(1, 3, 8, 8), &mut rng);
        let down = random_conv(12, 5, 1, 1, &mut rng);
        let explicit = conv2d(&haar_resample(&x, Direction::Down).unwrap(), &down).unwrap();
        let collapsed = haar_collapse_into_conv(Direction::Down, &down).unwrap();
        assert!(rel_diff(&collapsed.apply(&x).unwrap(), &explicit) <= 1e-5);
        assert_eq!(collapsed.conv.macs_per_output_pixel(), down.macs_per_output_pixel());

        let up = random_conv(3, 8, 1, 1, &mut rng);
        let explicit = haar_resample(&conv2d(&x, &up).unwrap(), Direction::Up).unwrap();
        let collapsed = haar_collapse_into_conv(Direction::Up, &up).unwrap();
        assert_eq!(collapsed.reshuffle, Reshuffle::DepthToSpaceAfter);
        assert!(rel_diff(&collapsed.apply(&x).unwrap(), &explicit) <= 1e-5);

        let k3 = random_conv(12, 4, 3, 1, &mut rng);
        assert!(haar_collapse_into_conv(Direction::Down, &k3).is_err());
    }

    #[test]
    fn block_shapes_and_identity() {
        let spec = BlockSpec::new(32, 1, 1).unwrap();
        let zero = Block311::zeros(spec).unwrap();
        assert_eq!(zero.expand.base.in_channels(), 32);
        assert_eq!(zero.project.base.in_channels(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(Shape::new(1, 32, 6, 6), &mut rng);
        assert_eq!(convscale311_forward(&x, &spec, &zero).unwrap(), x);
        assert_eq!(zero.collapse().forward(&x).unwrap(), x);
        assert_eq!(cs_chain_forward(&x, &spec, &[zero.clone(), zero.clone()]).unwrap(), x);
        assert_eq!(cs_chain_forward(&x, &spec, &[]).unwrap(), x);
        assert!(convscale311_forward(&random(Shape::new(1, 16, 4, 4), &mut rng), &spec, &zero).is_err());
    }

    #[test]
    fn block_mac_counts() {
        let spec = BlockSpec::new(64, 1, 2).unwrap();
        assert_eq!(spec.groups(), 2);
        assert_eq!(spec.macs_per_pixel(), 64 * 32 * 9 + 64 * 128 + 128 * 64);
        assert_eq!(spec.macs_per_pixel(), 34_816);
        assert_eq!(cs_chain_macs_per_pixel(&spec, 3), 3 * cs_chain_macs_per_pixel(&spec, 1));
        assert!(BlockSpec::new(64, 5, 1).is_err());
        assert!(BlockSpec::new(112, 1, 1).is_err());
    }

    #[test]
    fn spatial_scale_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(Shape::new(1, 5, 4, 4), &mut rng);
        let s = SpatialScale {
            gamma: (0..5).map(|_| rng.gen_range(0.1..3.0)).collect(),
        };
        let back = s.apply_inverse(&s.apply(&x).unwrap()).unwrap();
        assert!(rel_diff(&back, &x) <= 1e-6);
    }
}
