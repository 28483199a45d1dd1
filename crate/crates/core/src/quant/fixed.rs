//! Affine 8-bit quantisation parameters and fixed-point requantisation.

use crate::error::{invalid, Result};

/// `real = scale * (q - zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

/// Smallest scale handed out for degenerate ranges.
pub const SCALE_FLOOR: f32 = 1e-8;

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(invalid(format!("quantisation scale {scale} must be positive and finite")));
        }
        if !(0..=255).contains(&zero_point) {
            return Err(invalid(format!("zero point {zero_point} outside [0, 255]")));
        }
        Ok(Self { scale, zero_point })
    }

    /// Asymmetric parameters covering `[min(lo, 0), max(hi, 0)]`.
    pub fn from_range(lo: f32, hi: f32) -> Self {
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        let mut scale = (hi - lo) / 255.0;
        if !(scale >= SCALE_FLOOR) {
            log::warn!("degenerate activation range [{lo}, {hi}], using scale floor");
            scale = SCALE_FLOOR;
        }
        let zp = (-lo / scale).round().clamp(0.0, 255.0) as i32;
        Self { scale, zero_point: zp }
    }

    pub fn quantize(&self, v: f32) -> u8 {
        ((v / self.scale).round() + self.zero_point as f32).clamp(0.0, 255.0) as u8
    }

    pub fn dequantize(&self, q: u8) -> f32 {
        self.scale * (q as i32 - self.zero_point) as f32
    }
}

/// Fixed-point approximation `m * 2^-shift` of a positive real ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Multiplier {
    pub m: i32,
    pub shift: u32,
}

const M_LO: i64 = 1 << 30;
const M_HI: i64 = 1 << 31;

impl Multiplier {
    /// Normalises so that `m` lies in `[2^30, 2^31)` and `0 <= shift < 64`.
    /// The mantissa is rounded half to even. Ratios below `2^-33` are
    /// flushed to the smallest representable multiplier.
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(invalid(format!("requantisation ratio {ratio} must be positive")));
        }
        if ratio >= (1u64 << 31) as f64 {
            return Err(invalid(format!("requantisation ratio {ratio} too large")));
        }
        let mut shift = 0i32;
        let mut v = ratio;
        while v < M_LO as f64 && shift < 63 {
            v *= 2.0;
            shift += 1;
        }
        while v >= M_HI as f64 {
            v *= 0.5;
            shift -= 1;
        }
        if v < M_LO as f64 {
            log::warn!("requantisation ratio {ratio} flushed to 2^-33");
            return Ok(Self { m: M_LO as i32, shift: 63 });
        }
        let mut m = round_half_even(v);
        if m == M_HI {
            m = M_LO;
            shift -= 1;
        }
        Ok(Self { m: m as i32, shift: shift as u32 })
    }

    pub fn ratio(&self) -> f64 {
        self.m as f64 * 2f64.powi(-(self.shift as i32))
    }

    /// `round(acc * m / 2^shift)`, ties away from zero.
    #[inline]
    pub fn apply(&self, acc: i32) -> i64 {
        let p = acc as i64 * self.m as i64;
        if self.shift == 0 {
            return p;
        }
        let half = 1i64 << (self.shift - 1);
        if p >= 0 {
            (p + half) >> self.shift
        } else {
            -((-p + half) >> self.shift)
        }
    }
}

fn round_half_even(v: f64) -> i64 {
    let f = v.floor();
    let d = v - f;
    let f = f as i64;
    if d > 0.5 || (d == 0.5 && f % 2 != 0) {
        f + 1
    } else {
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn big_requant(acc: i32, mul: Multiplier) -> i64 {
        let p = BigInt::from(acc) * BigInt::from(mul.m);
        let d = BigInt::from(1u64) << mul.shift;
        let mag = (p.magnitude() * 2u32 + d.magnitude()) / (d.magnitude() * 2u32);
        let v: i64 = i64::try_from(BigInt::from(mag)).unwrap();
        if p.sign() == num_bigint::Sign::Minus {
            -v
        } else {
            v
        }
    }

    #[test]
    fn unit_ratio_normalisation() {
        // 0.5 * 0.5 / 0.25
        let m = Multiplier::from_ratio(0.5 * 0.5 / 0.25).unwrap();
        assert_eq!(m, Multiplier { m: 1 << 30, shift: 30 });
    }

    #[test]
    fn hand_example() {
        let acc = (200 - 100) * (228 - 128);
        assert_eq!(acc, 10_000);
        let one = Multiplier { m: 1 << 30, shift: 30 };
        assert_eq!(one.apply(acc), 10_000);
        assert_eq!((one.apply(acc)).clamp(0, 255), 255);
        let half = Multiplier { m: 1 << 30, shift: 31 };
        assert_eq!(half.apply(acc), 5_000);
        assert_eq!(half.apply(3), 2);
        assert_eq!(half.apply(-3), -2);
    }

    #[test]
    fn mantissa_carry_renormalises() {
        let m = Multiplier::from_ratio(1.0 - 1e-12).unwrap();
        assert_eq!(m, Multiplier { m: 1 << 30, shift: 30 });
    }

    #[test]
    fn range_limits() {
        assert!(Multiplier::from_ratio(0.0).is_err());
        assert!(Multiplier::from_ratio(3e9).is_err());
        assert_eq!(Multiplier::from_ratio(1e-12).unwrap().shift, 63);
    }

    #[test]
    fn activation_params_cover_range() {
        let p = QuantParams::from_range(0.0, 1.0);
        assert_eq!(p.zero_point, 0);
        for i in 0..=100 {
            let v = i as f32 / 100.0;
            assert!((p.dequantize(p.quantize(v)) - v).abs() <= 1.0 / 510.0 + 1e-7);
        }
        let p = QuantParams::from_range(-2.0, 6.0);
        assert_eq!(p.dequantize(p.zero_point as u8), 0.0);
        assert_eq!(QuantParams::from_range(0.0, 0.0).scale, SCALE_FLOOR);
    }

    proptest! {
        #[test]
        fn normalised_and_close(ratio in 1e-9f64..1e6) {
            let m = Multiplier::from_ratio(ratio).unwrap();
            prop_assert!((1 << 30..1i64 << 31).contains(&(m.m as i64)));
            prop_assert!(m.shift < 64);
            prop_assert!((m.ratio() / ratio - 1.0).abs() < 1e-9);
        }

        #[test]
        fn matches_big_integer_oracle(acc in any::<i32>(), ratio in 1e-9f64..1e3) {
            let m = Multiplier::from_ratio(ratio).unwrap();
            prop_assert_eq!(m.apply(acc), big_requant(acc, m));
        }
    }
}
