//! Planar float images, MSE and PSNR.

use crate::error::{shape, Result};
use crate::image_io::RgbImage;

/// Planar `[C, H, W]` image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape(format!("image shape [{channels}, {height}, {width}] must be positive")));
        }
        if data.len() != channels * height * width {
            return Err(shape(format!(
                "{} values for shape [{channels}, {height}, {width}]",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            channels: 3,
            height: img.height,
            width: img.width,
            data: img.to_planar(),
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(shape(format!(
                "[{}, {}, {}] vs [{}, {}, {}]",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )));
        }
        Ok(())
    }
}

pub fn mse(x: &FloatImage, y: &FloatImage) -> Result<f64> {
    x.check_same(y)?;
    let s: f64 = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.data.len() as f64)
}

/// `-10 log10(mse)` for unit peak; `+inf` for identical images.
pub fn psnr(x: &FloatImage, y: &FloatImage) -> Result<f64> {
    let m = mse(x, y)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}
