//! Multi-scale structural similarity.

use crate::error::Result;
use crate::metrics::pixel::FloatImage;

/// Conventional per-scale exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const FULL_MIN_DIM: usize = 160;

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filter.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = row[x..x + n].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, &s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    (out, oh, ow)
}

fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]));
        }
    }
    (out, oh, ow)
}

/// Mean contrast-structure term and mean SSIM of one scale.
fn scale_stats(x: &[f64], y: &[f64], h: usize, w: usize) -> (f64, f64) {
    let k = gaussian(WINDOW.min(h).min(w));
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, oh, ow) = filter(x, h, w, &k);
    let (my, ..) = filter(y, h, w, &k);
    let (xx, ..) = filter(&sq(x, x), h, w, &k);
    let (yy, ..) = filter(&sq(y, y), h, w, &k);
    let (xy, ..) = filter(&sq(x, y), h, w, &k);
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..oh * ow {
        let (ux, uy) = (mx[i], my[i]);
        let vx = xx[i] - ux * ux;
        let vy = yy[i] - uy * uy;
        let cov = xy[i] - ux * uy;
        let cs = (2.0 * cov + C2) / (vx + vy + C2);
        let l = (2.0 * ux * uy + C1) / (ux * ux + uy * uy + C1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    let n = (oh * ow) as f64;
    (cs_sum / n, ssim_sum / n)
}

/// Number of dyadic scales used for an image whose smaller side is `min_dim`.
pub fn ms_ssim_scales(min_dim: usize) -> usize {
    if min_dim >= FULL_MIN_DIM {
        return MS_SSIM_WEIGHTS.len();
    }
    (1..MS_SSIM_WEIGHTS.len()).rev().find(|&k| min_dim >> (k - 1) >= WINDOW).unwrap_or(1)
}

fn channel_ms_ssim(x: &[f64], y: &[f64], h: usize, w: usize, scales: usize) -> f64 {
    let norm: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut x, mut y, mut h, mut w) = (x.to_vec(), y.to_vec(), h, w);
    let mut out = 1.0;
    for (s, &wt) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (cs, ssim) = scale_stats(&x, &y, h, w);
        let term = if s + 1 == scales { ssim } else { cs };
        out *= term.max(0.0).powf(wt / norm);
        if s + 1 < scales {
            let (nx, nh, nw) = downsample(&x, h, w);
            y = downsample(&y, h, w).0;
            (x, h, w) = (nx, nh, nw);
        }
    }
    out
}

/// Channel-averaged MS-SSIM. Images whose smaller side is under 160 use
/// fewer scales with renormalised exponents and log a warning.
pub fn ms_ssim(x: &FloatImage, y: &FloatImage) -> Result<f64> {
    x.check_same(y)?;
    let scales = ms_ssim_scales(x.height.min(x.width));
    if scales < MS_SSIM_WEIGHTS.len() {
        log::warn!(
            "ms-ssim on {}x{} uses {scales} of {} scales",
            x.width,
            x.height,
            MS_SSIM_WEIGHTS.len()
        );
    }
    let total: f64 = (0..x.channels)
        .map(|c| channel_ms_ssim(x.plane(c), y.plane(c), x.height, x.width, scales))
        .sum();
    Ok(total / x.channels as f64)
}
