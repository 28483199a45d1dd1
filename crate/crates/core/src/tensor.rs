//! Dense rank-4 tensors and the handful of kernels the codec needs.
//!
//! Layout is `(batch, channels, height, width)`, channel-major and row-major
//! inside each plane. Every kernel here is a pure function; convolution keeps a
//! fixed per-element accumulation order (bias, then kernel position, then input
//! channel) so results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{invalid, shape, Result};

/// Shape of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Wraps `data`, rejecting length mismatches and non-finite entries.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(self::shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite tensor entry at {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(self::shape(format!("cannot reshape {} to {shape}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn relu_inplace(&mut self) {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
    }

    /// Multiplies channel `c` of every batch item by `scales[c]`.
    pub fn scale_channels(&mut self, scales: &[f32]) -> Result<()> {
        if scales.len() != self.shape.c {
            return Err(shape(format!(
                "{} channel scales for tensor {}",
                scales.len(),
                self.shape
            )));
        }
        let p = self.shape.plane();
        for (i, plane) in self.data.chunks_mut(p).enumerate() {
            let s = scales[i % self.shape.c];
            plane.iter_mut().for_each(|v| *v *= s);
        }
        Ok(())
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
        let Shape { n, h, w, .. } = first.shape;
        let mut c_total = 0;
        for p in parts {
            if p.shape.n != n || p.shape.h != h || p.shape.w != w {
                return Err(shape(format!(
                    "cannot concatenate {} with {}",
                    first.shape, p.shape
                )));
            }
            c_total += p.shape.c;
        }
        let out_shape = Shape::new(n, c_total, h, w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for b in 0..n {
            for p in parts {
                let per = p.shape.c * h * w;
                data.extend_from_slice(&p.data[b * per..(b + 1) * per]);
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Copies channels `[start, start + count)` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.c {
            return Err(shape(format!(
                "channel slice {start}..{} out of {}",
                start + count,
                self.shape.c
            )));
        }
        let s = self.shape;
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * count * p);
        for b in 0..s.n {
            let base = (b * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + count * p]);
        }
        Ok(Self {
            shape: Shape::new(s.n, count, s.h, s.w),
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Weights of a (possibly grouped) 2-D convolution.
///
/// `weight` is shaped `(K, C/G, Y, X)`; `bias` has `K` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvWeights {
    pub fn new(
        weight: Tensor,
        bias: Vec<f32>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let w = Self {
            weight,
            bias,
            stride,
            padding,
            groups,
        };
        w.validate()?;
        Ok(w)
    }

    /// Zero-initialised convolution with the given geometry.
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 {
            return Err(invalid(format!(
                "in_channels {in_channels} not divisible by groups {groups}"
            )));
        }
        Self::new(
            Tensor::zeros(Shape::new(out_channels, in_channels / groups, kernel, kernel)),
            vec![0.0; out_channels],
            stride,
            padding,
            groups,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        if self.stride == 0 {
            return Err(invalid("stride must be positive"));
        }
        if self.groups == 0 {
            return Err(invalid("groups must be positive"));
        }
        if s.n % self.groups != 0 {
            return Err(invalid(format!(
                "output channels {} not divisible by groups {}",
                s.n, self.groups
            )));
        }
        if s.c == 0 || s.h == 0 || s.w == 0 {
            return Err(invalid("empty kernel"));
        }
        if self.bias.len() != s.n {
            return Err(shape(format!("bias has {} entries for {} outputs", self.bias.len(), s.n)));
        }
        if !self.weight.is_finite() || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(invalid("non-finite convolution weights"));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c * self.groups
    }

    pub fn in_per_group(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    /// Weight plus bias element count.
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_output_pixel(&self) -> usize {
        self.weight.len()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ky, kx) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < ky || pw < kx {
            return Err(shape(format!(
                "input {h}x{w} with padding {} smaller than kernel {ky}x{kx}",
                self.padding
            )));
        }
        Ok(((ph - ky) / self.stride + 1, (pw - kx) / self.stride + 1))
    }
}

const ROW_BLOCK_ELEMS: usize = 4096;

/// Zero-padded grouped 2-D convolution.
pub fn conv2d(input: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    w.validate()?;
    let s = input.shape();
    if s.c != w.in_channels() {
        return Err(shape(format!(
            "input has {} channels, convolution expects {}",
            s.c,
            w.in_channels()
        )));
    }
    let (oh, ow) = w.output_hw(s.h, s.w)?;
    let k_total = w.out_channels();
    let cpg = w.in_per_group();
    let kpg = k_total / w.groups;
    let (ky, kx) = w.kernel();
    let per_k = cpg * ky * kx;
    let geom = PlaneGeom {
        h: s.h,
        w: s.w,
        oh,
        ow,
        ky,
        kx,
        stride: w.stride,
        pad: w.padding,
        cpg,
    };

    let mut out = Tensor::zeros(Shape::new(s.n, k_total, oh, ow));
    let in_plane = s.plane();
    let out_plane = oh * ow;
    if out_plane == 0 {
        return Ok(out);
    }
    for b in 0..s.n {
        let in_batch = &input.data()[b * s.c * in_plane..(b + 1) * s.c * in_plane];
        let out_batch = &mut out.data_mut()[b * k_total * out_plane..(b + 1) * k_total * out_plane];
        out_batch
            .par_chunks_mut(out_plane)
            .enumerate()
            .for_each(|(k, out_k)| {
                let g = k / kpg;
                let group_in = &in_batch[g * cpg * in_plane..(g + 1) * cpg * in_plane];
                let wk = &w.weight.data()[k * per_k..(k + 1) * per_k];
                conv_plane(group_in, wk, w.bias[k], &geom, out_k);
            });
    }
    Ok(out)
}

struct PlaneGeom {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    ky: usize,
    kx: usize,
    stride: usize,
    pad: usize,
    cpg: usize,
}

fn conv_plane(input: &[f32], wk: &[f32], bias: f32, g: &PlaneGeom, out: &mut [f32]) {
    out.fill(bias);
    let in_plane = g.h * g.w;
    let rows = (ROW_BLOCK_ELEMS / g.ow).max(1);
    let mut oy0 = 0;
    while oy0 < g.oh {
        let oy1 = (oy0 + rows).min(g.oh);
        for dy in 0..g.ky {
            for dx in 0..g.kx {
                // output columns whose source column lies inside the image
                let lo = ceil_div_sat(g.pad, dx, g.stride);
                let hi = if g.w + g.pad > dx {
                    ((g.w + g.pad - dx - 1) / g.stride + 1).min(g.ow)
                } else {
                    0
                };
                if lo >= hi {
                    continue;
                }
                for ci in 0..g.cpg {
                    let wv = wk[(ci * g.ky + dy) * g.kx + dx];
                    let plane = &input[ci * in_plane..(ci + 1) * in_plane];
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + dy;
                        if iy < g.pad || iy - g.pad >= g.h {
                            continue;
                        }
                        let in_row = &plane[(iy - g.pad) * g.w..(iy - g.pad + 1) * g.w];
                        let out_row = &mut out[oy * g.ow + lo..oy * g.ow + hi];
                        let ix0 = lo * g.stride + dx - g.pad;
                        if g.stride == 1 {
                            for (o, &i) in out_row.iter_mut().zip(&in_row[ix0..ix0 + (hi - lo)]) {
                                *o += wv * i;
                            }
                        } else {
                            for (j, o) in out_row.iter_mut().enumerate() {
                                *o += wv * in_row[ix0 + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
        oy0 = oy1;
    }
}

/// Smallest `ox` with `ox * stride + dx >= pad`.
fn ceil_div_sat(pad: usize, dx: usize, stride: usize) -> usize {
    if dx >= pad {
        0
    } else {
        (pad - dx).div_ceil(stride)
    }
}

/// Rearranges `f x f` spatial blocks into channels.
///
/// Output channel `(dy * f + dx) * C + c` holds phase `(dy, dx)` of input
/// channel `c`.
pub fn space_to_depth(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(invalid("space_to_depth factor must be positive"));
    }
    let s = input.shape();
    if s.h % factor != 0 || s.w % factor != 0 {
        return Err(shape(format!(
            "spatial dims {}x{} not divisible by {factor}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / factor, s.w / factor);
    let out_shape = Shape::new(s.n, s.c * factor * factor, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    for b in 0..s.n {
        for dy in 0..factor {
            for dx in 0..factor {
                let phase = dy * factor + dx;
                for c in 0..s.c {
                    let src = input.plane(b, c);
                    let dst = out.plane_mut(b, phase * s.c + c);
                    for y in 0..oh {
                        let row = &src[(y * factor + dy) * s.w..];
                        for x in 0..ow {
                            dst[y * ow + x] = row[x * factor + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`space_to_depth`].
pub fn depth_to_space(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(invalid("depth_to_space factor must be positive"));
    }
    let s = input.shape();
    let ff = factor * factor;
    if s.c % ff != 0 {
        return Err(shape(format!("{} channels not divisible by {ff}", s.c)));
    }
    let c_out = s.c / ff;
    let (oh, ow) = (s.h * factor, s.w * factor);
    let mut out = Tensor::zeros(Shape::new(s.n, c_out, oh, ow));
    for b in 0..s.n {
        for dy in 0..factor {
            for dx in 0..factor {
                let phase = dy * factor + dx;
                for c in 0..c_out {
                    let src = input.plane(b, phase * c_out + c);
                    let dst = out.plane_mut(b, c);
                    for y in 0..s.h {
                        let row = &mut dst[(y * factor + dy) * ow..];
                        for x in 0..s.w {
                            row[x * factor + dx] = src[y * s.w + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Non-overlapping `k x k` mean pooling.
///
/// Sizes that are not multiples of `k` are extended by replicating the last
/// row/column, so the output is `ceil(H/k) x ceil(W/k)`.
pub fn avg_pool2d(input: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(invalid("pool size must be positive"));
    }
    let s = input.shape();
    if k == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (s.h.div_ceil(k), s.w.div_ceil(k));
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let norm = 1.0 / (k * k) as f64;
    for b in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for dy in 0..k {
                        let y = (oy * k + dy).min(s.h - 1);
                        for dx in 0..k {
                            let x = (ox * k + dx).min(s.w - 1);
                            acc += src[y * s.w + x] as f64;
                        }
                    }
                    dst[oy * ow + ox] = (acc * norm) as f32;
                }
            }
        }
    }
    Ok(out)
}
