//! Multi-resolution L1, masked text L1 and the tile-seam step metric.

use crate::codec::TileGrid;
use crate::error::{invalid, shape, Result};
use crate::metrics::pixel::FloatImage;

/// Pyramid levels of the tiling artifact loss, pooling factors `1..=16`.
pub const TAL_LEVELS: usize = 5;
const STRIP: usize = 8;
const HIST_BINS: usize = 32;

/// Average pool by `f` with edge replication for partial blocks.
fn pool(img: &FloatImage, f: usize) -> FloatImage {
    if f == 1 {
        return img.clone();
    }
    let (oh, ow) = (img.height.div_ceil(f), img.width.div_ceil(f));
    let inv = 1.0 / (f * f) as f64;
    FloatImage::from_fn(img.channels, oh, ow, |c, y, x| {
        let mut s = 0.0;
        for dy in 0..f {
            let sy = (y * f + dy).min(img.height - 1);
            for dx in 0..f {
                s += img.at(c, sy, (x * f + dx).min(img.width - 1));
            }
        }
        s * inv
    })
}

fn mean_l1(a: &FloatImage, b: &FloatImage) -> f64 {
    a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.data.len() as f64
}

/// Sum over five dyadic pooling levels of the mean absolute difference.
pub fn tiling_artifact_loss(x: &FloatImage, y: &FloatImage) -> Result<f64> {
    x.check_same(y)?;
    Ok((0..TAL_LEVELS).map(|s| mean_l1(&pool(x, 1 << s), &pool(y, 1 << s))).sum())
}

/// Binary `H x W` mask shared by all channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl TextMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape(format!("{} mask values for {height}x{width}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(invalid("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: bool) -> Self {
        Self {
            height,
            width,
            data: vec![v as u8; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

/// Mean absolute error over masked pixels of every channel.
pub fn text_fidelity_loss(x: &FloatImage, y: &FloatImage, m: &TextMask) -> Result<f64> {
    x.check_same(y)?;
    if (m.height, m.width) != (x.height, x.width) {
        return Err(shape(format!("{}x{} mask on a {}x{} image", m.width, m.height, x.width, x.height)));
    }
    let n = x.height * x.width;
    let mut s = 0.0;
    for c in 0..x.channels {
        for (i, _) in m.data.iter().enumerate().filter(|(_, &v)| v == 1) {
            s += (x.data[c * n + i] - y.data[c * n + i]).abs();
        }
    }
    Ok(s / ((x.channels * m.count()) as f64).max(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeamAxis {
    /// Seam between horizontally adjacent tiles, at column `pos`.
    Vertical,
    /// Seam between vertically adjacent tiles, at row `pos`.
    Horizontal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeamError {
    pub axis: SeamAxis,
    pub pos: usize,
    pub mean: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// The last bin also counts everything beyond it.
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryReport {
    pub value: f64,
    pub seams: Vec<SeamError>,
    pub histogram: Histogram,
}

/// Mean of `img[c]` over rows `ys` and columns `xs`.
fn block_mean(img: &FloatImage, c: usize, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>) -> f64 {
    let n = (ys.len() * xs.len()) as f64;
    ys.map(|y| xs.clone().map(|x| img.at(c, y, x)).sum::<f64>()).sum::<f64>() / n
}

/// Per seam and per 8-pixel run along it: the step between the mean of the
/// 8-pixel strip after the seam and the strip before it, for each channel.
fn seam_steps(img: &FloatImage, axis: SeamAxis, pos: usize) -> Vec<f64> {
    let (along, across) = match axis {
        SeamAxis::Vertical => (img.height, img.width),
        SeamAxis::Horizontal => (img.width, img.height),
    };
    let before = pos.saturating_sub(STRIP)..pos;
    let after = pos..(pos + STRIP).min(across);
    let mut out = Vec::new();
    for c in 0..img.channels {
        for b in (0..along).step_by(STRIP) {
            let run = b..(b + STRIP).min(along);
            let (pre, post) = match axis {
                SeamAxis::Vertical => (
                    block_mean(img, c, run.clone(), before.clone()),
                    block_mean(img, c, run, after.clone()),
                ),
                SeamAxis::Horizontal => (
                    block_mean(img, c, before.clone(), run.clone()),
                    block_mean(img, c, after.clone(), run),
                ),
            };
            out.push(post - pre);
        }
    }
    out
}

/// Seam metric with per-seam means and an error histogram (32 bins of 1/255).
pub fn boundary_report(x: &FloatImage, y: &FloatImage, grid: &TileGrid) -> Result<BoundaryReport> {
    x.check_same(y)?;
    if (grid.width, grid.height) != (x.width, x.height) {
        return Err(shape(format!(
            "{}x{} grid on a {}x{} image",
            grid.width, grid.height, x.width, x.height
        )));
    }
    let mut histogram = Histogram {
        bin_width: 1.0 / 255.0,
        counts: vec![0; HIST_BINS],
    };
    let seams_at = (1..grid.cols)
        .map(|c| (SeamAxis::Vertical, c * grid.core_width))
        .chain((1..grid.rows).map(|r| (SeamAxis::Horizontal, r * grid.core_height)));
    let (mut total, mut count) = (0.0, 0usize);
    let mut seams = Vec::new();
    for (axis, pos) in seams_at {
        let errs: Vec<f64> = seam_steps(x, axis, pos)
            .iter()
            .zip(seam_steps(y, axis, pos))
            .map(|(a, b)| (b - a).abs())
            .collect();
        for &e in &errs {
            let bin = ((e / histogram.bin_width) as usize).min(HIST_BINS - 1);
            histogram.counts[bin] += 1;
        }
        let s: f64 = errs.iter().sum();
        total += s;
        count += errs.len();
        seams.push(SeamError {
            axis,
            pos,
            mean: s / errs.len() as f64,
            samples: errs.len(),
        });
    }
    if seams.is_empty() {
        log::warn!("single-tile image has no tile boundaries");
        return Ok(BoundaryReport {
            value: 0.0,
            seams,
            histogram,
        });
    }
    Ok(BoundaryReport {
        value: total / count as f64,
        seams,
        histogram,
    })
}

pub fn boundary_lowfreq_error(x: &FloatImage, y: &FloatImage, grid: &TileGrid) -> Result<f64> {
    Ok(boundary_report(x, y, grid)?.value)
}
