//! Static per-channel histogram prior for the hyper-latent.

use crate::coding::cdf::CdfTable;
use crate::coding::range::{RangeDecoder, RangeEncoder};
use crate::error::{config, invalid, shape, Result};
use crate::model::{TensorData, WeightStore};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_HYPER_SUPPORT: i32 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior {
    pub support: i32,
    pub tables: Vec<CdfTable>,
}

/// Rounds the hyper-latent to integers (unit width, ties away from zero).
pub fn quantize_hyper(z: &Tensor) -> Vec<i32> {
    z.data().iter().map(|&v| (v as f64).round() as i32).collect()
}

impl FactorizedPrior {
    /// Add-one smoothed histograms of quantised calibration latents,
    /// one per channel.
    pub fn from_samples(channels: usize, support: i32, samples: &[(Shape, Vec<i32>)]) -> Result<Self> {
        if support < 1 {
            return Err(invalid("support radius must be at least 1"));
        }
        let n = 2 * support as usize + 2;
        let mut counts = vec![vec![1.0f64; n]; channels];
        for (s, data) in samples {
            if s.c != channels || s.numel() != data.len() {
                return Err(shape(format!("sample {s} does not have {channels} channels")));
            }
            let plane = s.plane();
            for (i, &v) in data.iter().enumerate() {
                let c = (i / plane) % channels;
                let b = if v.abs() <= support {
                    (v + support) as usize
                } else {
                    n - 1
                };
                counts[c][b] += 1.0;
            }
        }
        let tables = counts
            .iter()
            .map(|c| CdfTable::from_probabilities(support, c, false))
            .collect::<Result<_>>()?;
        Ok(Self { support, tables })
    }

    /// Each channel the same fixed Laplace-like shape; used when no
    /// calibration data is available.
    pub fn uniform_prior(channels: usize, support: i32) -> Result<Self> {
        let n = 2 * support as usize + 2;
        let mut probs: Vec<f64> = (0..n - 1)
            .map(|i| 0.7f64.powi((i as i32 - support).abs()))
            .collect();
        probs.push(1e-3);
        let t = CdfTable::from_probabilities(support, &probs, true)?;
        Ok(Self {
            support,
            tables: vec![t; channels],
        })
    }

    pub fn channels(&self) -> usize {
        self.tables.len()
    }

    fn check(&self, s: Shape) -> Result<()> {
        if s.c != self.channels() {
            return Err(shape(format!(
                "hyper-latent has {} channels, prior has {}",
                s.c,
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, s: Shape, symbols: &[i32]) -> Result<Vec<u8>> {
        self.check(s)?;
        if symbols.len() != s.numel() {
            return Err(shape("symbol count does not match shape"));
        }
        let mut enc = RangeEncoder::new();
        let plane = s.plane();
        for (i, &v) in symbols.iter().enumerate() {
            enc.encode_symbol(&self.tables[(i / plane) % s.c], v)?;
        }
        Ok(enc.finish())
    }

    pub fn decode(&self, s: Shape, bytes: &[u8]) -> Result<Vec<i32>> {
        self.check(s)?;
        let mut dec = RangeDecoder::new(bytes)?;
        let plane = s.plane();
        (0..s.numel())
            .map(|i| dec.decode_symbol(&self.tables[(i / plane) % s.c]))
            .collect()
    }

    pub fn estimate_bits(&self, s: Shape, symbols: &[i32]) -> f64 {
        let plane = s.plane();
        symbols
            .iter()
            .enumerate()
            .map(|(i, &v)| self.tables[(i / plane) % s.c].cost_bits(v))
            .sum()
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        store.set_config(format!("{prefix}support"), self.support.to_string())?;
        let n = 2 * self.support as usize + 2;
        let freqs: Vec<i32> = self
            .tables
            .iter()
            .flat_map(|t| t.freqs().iter().map(|&f| f as i32))
            .collect();
        store.insert(format!("{prefix}freqs"), vec![self.channels(), n], TensorData::I32(freqs))
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let support: i32 = store
            .config_value(&format!("{prefix}support"))?
            .parse()
            .map_err(|_| config("support", "not an integer"))?;
        let t = store.get(&format!("{prefix}freqs"))?;
        let n = 2 * support as usize + 2;
        let TensorData::I32(freqs) = &t.data else {
            return Err(config("freqs", "expected i32 data"));
        };
        if t.shape.len() != 2 || t.shape[1] != n {
            return Err(config("freqs", "shape does not match support"));
        }
        let tables = freqs
            .chunks(n)
            .map(|row| CdfTable::from_frequencies(support, row.iter().map(|&f| f as u32).collect()))
            .collect::<Result<_>>()?;
        Ok(Self { support, tables })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn histogram_prior_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Shape::new(1, 4, 8, 8);
        let samples: Vec<(Shape, Vec<i32>)> = (0..3)
            .map(|_| (s, (0..s.numel()).map(|i| rng.gen_range(-3..=3) * (i % 4) as i32).collect()))
            .collect();
        let prior = FactorizedPrior::from_samples(4, 8, &samples).unwrap();
        let sym: Vec<i32> = (0..s.numel()).map(|_| rng.gen_range(-12..=12)).collect();
        let bytes = prior.encode(s, &sym).unwrap();
        assert_eq!(prior.decode(s, &bytes).unwrap(), sym);

        let mut store = WeightStore::new();
        prior.save(&mut store, "zp.").unwrap();
        assert_eq!(FactorizedPrior::load(&store, "zp.").unwrap(), prior);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let prior = FactorizedPrior::uniform_prior(2, 4).unwrap();
        assert!(prior.encode(Shape::new(1, 3, 1, 1), &[0, 0, 0]).is_err());
    }

    #[test]
    fn hyper_rounding_ties_away() {
        let z = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.5, -0.5, 1.49, -2.5]).unwrap();
        assert_eq!(quantize_hyper(&z), vec![1, -1, 1, -3]);
    }
}
