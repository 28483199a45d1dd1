//! Scalar reference interpreter for [`QuantizedModel`].
//!
//! One output element at a time, 128-bit intermediates and division-based
//! rounding; shares no arithmetic code with the optimised path.

use crate::error::{invalid, shape, Result};
use crate::quant::fixed::Multiplier;
use crate::quant::model::{QuantizedConv, QuantizedLayer, QuantizedModel, QuantizedTensor, WEIGHT_ZERO_POINT};

fn requant(acc: i128, m: Multiplier) -> i128 {
    let p = acc * m.m as i128;
    let d = 1i128 << m.shift;
    let q = (2 * p.abs() + d) / (2 * d);
    if p < 0 {
        -q
    } else {
        q
    }
}

fn conv(x: &QuantizedTensor, l: &QuantizedConv) -> Result<QuantizedTensor> {
    let s = x.shape;
    if s.c != l.in_channels {
        return Err(shape("reference conv: channel mismatch"));
    }
    let (oh, ow) = l.output_hw(s.h, s.w);
    let cpg = l.in_channels / l.groups;
    let kpg = l.out_channels / l.groups;
    let k = l.kernel;
    let mut out = Vec::with_capacity(s.n * l.out_channels * oh * ow);
    for n in 0..s.n {
        for ko in 0..l.out_channels {
            let g = ko / kpg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = l.qbias[ko] as i128;
                    for ci in 0..cpg {
                        let c = g * cpg + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * l.stride + ky) as i64 - l.padding as i64;
                                let ix = (ox * l.stride + kx) as i64 - l.padding as i64;
                                if iy < 0 || ix < 0 || iy >= s.h as i64 || ix >= s.w as i64 {
                                    continue;
                                }
                                let xi = ((n * s.c + c) * s.h + iy as usize) * s.w + ix as usize;
                                let wi = ((ko * cpg + ci) * k + ky) * k + kx;
                                let xv = x.data[xi] as i128 - l.input.zero_point as i128;
                                let wv = l.qweights[wi] as i128 - WEIGHT_ZERO_POINT as i128;
                                acc += xv * wv;
                            }
                        }
                    }
                    let mut v = requant(acc, l.requant[ko]) + l.output.zero_point as i128;
                    if l.relu {
                        v = v.max(l.output.zero_point as i128);
                    }
                    out.push(v.clamp(0, 255) as u8);
                }
            }
        }
    }
    Ok(QuantizedTensor {
        shape: crate::tensor::Shape::new(s.n, l.out_channels, oh, ow),
        data: out,
    })
}

fn depth_to_space(x: &QuantizedTensor) -> Result<QuantizedTensor> {
    let s = x.shape;
    if s.c % 4 != 0 {
        return Err(shape("reference depth-to-space: channels not divisible by 4"));
    }
    let c_out = s.c / 4;
    let (h, w) = (s.h * 2, s.w * 2);
    let mut out = vec![0u8; s.n * c_out * h * w];
    for n in 0..s.n {
        for c in 0..c_out {
            for y in 0..h {
                for xx in 0..w {
                    let phase = (y % 2) * 2 + xx % 2;
                    let src = ((n * s.c + phase * c_out + c) * s.h + y / 2) * s.w + xx / 2;
                    out[((n * c_out + c) * h + y) * w + xx] = x.data[src];
                }
            }
        }
    }
    Ok(QuantizedTensor {
        shape: crate::tensor::Shape::new(s.n, c_out, h, w),
        data: out,
    })
}

/// Executes `qm` on `x` and returns the head codes.
pub fn reference_forward(qm: &QuantizedModel, x: &QuantizedTensor) -> Result<QuantizedTensor> {
    let mut h = x.clone();
    let mut stack = Vec::new();
    for l in &qm.layers {
        h = match l {
            QuantizedLayer::Conv(c) => conv(&h, c)?,
            QuantizedLayer::DepthToSpace => depth_to_space(&h)?,
            QuantizedLayer::SaveResidual => {
                stack.push(h.clone());
                h
            }
            QuantizedLayer::AddResidual(p) => {
                let a = stack.pop().ok_or_else(|| invalid("unbalanced residual"))?;
                if a.shape != h.shape {
                    return Err(shape("reference add: shape mismatch"));
                }
                let data = a
                    .data
                    .iter()
                    .zip(&h.data)
                    .map(|(&qa, &qb)| {
                        let va = requant(qa as i128 - p.a.zero_point as i128, p.ma);
                        let vb = requant(qb as i128 - p.b.zero_point as i128, p.mb);
                        (va + vb + p.output.zero_point as i128).clamp(0, 255) as u8
                    })
                    .collect();
                QuantizedTensor { shape: h.shape, data }
            }
        };
    }
    Ok(h)
}
