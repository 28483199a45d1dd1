//! Distortion aggregation and the level-weighted rate-distortion loss.

use crate::codec::{QualityLevel, COARSE_LEVELS};
use crate::error::{config, Result};
use crate::metrics::artifacts::{text_fidelity_loss, tiling_artifact_loss, TextMask};
use crate::metrics::pixel::{mse, FloatImage};
use crate::metrics::ssim::ms_ssim;

/// Individual distortion terms; `None` terms are left out of the sum.
/// `ms_ssim` holds the similarity, and enters the distortion as `1 - ms_ssim`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistortionTerms {
    pub mse: f64,
    pub lpips: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub tal: Option<f64>,
    pub text: Option<f64>,
    pub gan: Option<f64>,
}

impl DistortionTerms {
    /// Every term computable without a learned network.
    pub fn compute(x: &FloatImage, y: &FloatImage, mask: Option<&TextMask>) -> Result<Self> {
        Ok(Self {
            mse: mse(x, y)?,
            lpips: None,
            ms_ssim: Some(ms_ssim(x, y)?),
            tal: Some(tiling_artifact_loss(x, y)?),
            text: mask.map(|m| text_fidelity_loss(x, y, m)).transpose()?,
            gan: None,
        })
    }
}

/// `w1..w5` for LPIPS, MS-SSIM, tiling artifact, text fidelity and GAN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionWeights {
    pub lpips: f64,
    pub ms_ssim: f64,
    pub tal: f64,
    pub text: f64,
    pub gan: f64,
}

impl Default for DistortionWeights {
    fn default() -> Self {
        Self {
            lpips: 1.0,
            ms_ssim: 1.0,
            tal: 1.0,
            text: 1.0,
            gan: 1.0,
        }
    }
}

pub fn distortion(t: &DistortionTerms, w: &DistortionWeights) -> f64 {
    let opt = |v: Option<f64>, wt: f64| v.map_or(0.0, |v| wt * v);
    t.mse
        + opt(t.lpips, w.lpips)
        + opt(t.ms_ssim.map(|s| 1.0 - s), w.ms_ssim)
        + opt(t.tal, w.tal)
        + opt(t.text, w.text)
        + opt(t.gan, w.gan)
}

/// Per coarse level distortion weight `alpha` and rate trade-off `lambda`.
/// Fine levels blend their two coarse neighbours linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSchedule {
    pub alpha: [f64; COARSE_LEVELS],
    pub lambda: [f64; COARSE_LEVELS],
}

impl Default for LevelSchedule {
    /// `alpha = 1`; `lambda` geometric from 0.002 to 0.2.
    fn default() -> Self {
        let ratio = (0.2f64 / 0.002).powf(1.0 / (COARSE_LEVELS - 1) as f64);
        Self {
            alpha: [1.0; COARSE_LEVELS],
            lambda: std::array::from_fn(|i| 0.002 * ratio.powi(i as i32)),
        }
    }
}

impl LevelSchedule {
    pub fn new(alpha: [f64; COARSE_LEVELS], lambda: [f64; COARSE_LEVELS]) -> Result<Self> {
        if alpha.iter().chain(&lambda).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(config("level_schedule", "alpha and lambda must be finite and non-negative"));
        }
        Ok(Self { alpha, lambda })
    }

    /// `(alpha_l, lambda_l)`.
    pub fn at(&self, l: QualityLevel) -> (f64, f64) {
        l.blend().iter().fold((0.0, 0.0), |(a, b), &(i, w)| {
            (a + w as f64 * self.alpha[i], b + w as f64 * self.lambda[i])
        })
    }
}

/// `alpha_l * D + alpha_l * lambda_l * R`.
pub fn total_loss(
    terms: &DistortionTerms,
    weights: &DistortionWeights,
    rate_bits: f64,
    l: QualityLevel,
    schedule: &LevelSchedule,
) -> f64 {
    let (alpha, lambda) = schedule.at(l);
    alpha * distortion(terms, weights) + alpha * lambda * rate_bits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms() -> DistortionTerms {
        DistortionTerms {
            mse: 0.01,
            ms_ssim: Some(0.9),
            tal: Some(0.2),
            ..Default::default()
        }
    }

    #[test]
    fn distortion_sums_present_terms() {
        let w = DistortionWeights {
            ms_ssim: 2.0,
            tal: 0.5,
            ..Default::default()
        };
        assert!((distortion(&terms(), &w) - (0.01 + 0.2 + 0.1)).abs() < 1e-12);
        let mut t = terms();
        t.text = Some(0.3);
        assert!((distortion(&t, &w) - (0.31 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_laws() {
        let w = DistortionWeights::default();
        let l = QualityLevel::new(23).unwrap();
        let zero_rate = LevelSchedule::new([1.0; 8], [0.0; 8]).unwrap();
        assert_eq!(total_loss(&terms(), &w, 1234.0, l, &zero_rate), distortion(&terms(), &w));
        let s = LevelSchedule::default();
        let (a, lam) = s.at(l);
        let zero = DistortionTerms::default();
        assert!((total_loss(&zero, &w, 500.0, l, &s) - a * lam * 500.0).abs() < 1e-12);
        let r1 = total_loss(&terms(), &w, 100.0, l, &s) - total_loss(&terms(), &w, 0.0, l, &s);
        let r2 = total_loss(&terms(), &w, 200.0, l, &s) - total_loss(&terms(), &w, 0.0, l, &s);
        assert!((r2 - 2.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn default_schedule() {
        let s = LevelSchedule::default();
        assert!((s.lambda[0] - 0.002).abs() < 1e-15 && (s.lambda[7] - 0.2).abs() < 1e-12);
        assert_eq!(s.at(QualityLevel::new(30).unwrap()).1, s.lambda[3]);
        let mid = s.at(QualityLevel::new(35).unwrap()).1;
        assert!(mid > s.lambda[3] && mid < s.lambda[4]);
        assert!(LevelSchedule::new([1.0; 8], [-1.0; 8]).is_err());
    }

    #[test]
    fn computed_terms_vanish_on_identity() {
        let x = FloatImage::from_fn(3, 24, 24, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 / 11.0);
        let t = DistortionTerms::compute(&x, &x, Some(&TextMask::filled(24, 24, true))).unwrap();
        assert_eq!(distortion(&t, &DistortionWeights::default()), 0.0);
    }
}
