//! One-shot context model: phase schedules and the per-phase `(mu, q)`
//! predictors. Scales never depend on the context, so all symbols can be
//! entropy decoded before any of this runs.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detmath;
use crate::error::{config, invalid, shape, Result};
use crate::layers::CHANNELS_PER_GROUP;
use crate::model::WeightStore;
use crate::tensor::{conv2d, ConvWeights, Shape, Tensor};

pub const MIN_WIDTH: f32 = 0.25;
pub const MAX_WIDTH: f32 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextSchedule {
    None,
    Channelwise4,
    Checkerboard,
    Grid2x2,
}

impl ContextSchedule {
    pub const ALL: [ContextSchedule; 4] = [
        ContextSchedule::None,
        ContextSchedule::Channelwise4,
        ContextSchedule::Checkerboard,
        ContextSchedule::Grid2x2,
    ];

    pub fn phase_count(self) -> usize {
        match self {
            ContextSchedule::None => 1,
            ContextSchedule::Channelwise4 | ContextSchedule::Grid2x2 => 4,
            ContextSchedule::Checkerboard => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextSchedule::None => "none",
            ContextSchedule::Channelwise4 => "channelwise4",
            ContextSchedule::Checkerboard => "checkerboard",
            ContextSchedule::Grid2x2 => "grid2x2",
        }
    }

    /// Phase of element `(c, y, x)` of a latent with `channels` channels.
    #[inline]
    pub fn phase_of(self, channels: usize, c: usize, y: usize, x: usize) -> usize {
        match self {
            ContextSchedule::None => 0,
            ContextSchedule::Channelwise4 => {
                let g = (channels / 4).max(1);
                (c / g).min(3)
            }
            ContextSchedule::Checkerboard => (y + x) % 2,
            ContextSchedule::Grid2x2 => 2 * (y % 2) + x % 2,
        }
    }
}

impl fmt::Display for ContextSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextSchedule {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config("context_schedule", format!("unknown schedule `{s}`")))
    }
}

/// Phase index of every element of a `(1, C, H, W)` latent.
pub fn phase_map(schedule: ContextSchedule, s: Shape) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.numel());
    for _ in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    out.push(schedule.phase_of(s.c, c, y, x) as u8);
                }
            }
        }
    }
    out
}

/// Ordered boolean masks, one per phase.
pub fn context_phases(schedule: ContextSchedule, s: Shape) -> Result<Vec<Vec<bool>>> {
    if s.numel() == 0 {
        return Err(invalid("latent shape must be positive"));
    }
    if schedule == ContextSchedule::Channelwise4 && s.c < 4 {
        return Err(invalid("channel-wise schedule needs at least 4 channels"));
    }
    let map = phase_map(schedule, s);
    Ok((0..schedule.phase_count())
        .map(|p| map.iter().map(|&m| m as usize == p).collect())
        .collect())
}

/// Per-phase predictor `concat(p, partial) -> (mu, raw log q)`:
/// 1x1 to C, ReLU, grouped 3x3, ReLU, 1x1 to 2C.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextModel {
    pub schedule: ContextSchedule,
    pub latent_channels: usize,
    pub learned_width: bool,
    pub phases: Vec<[ConvWeights; 3]>,
}

fn zero_phase(c: usize) -> Result<[ConvWeights; 3]> {
    let g = (c / CHANNELS_PER_GROUP).max(1);
    if c % g != 0 {
        return Err(config("latent_channels", format!("{c} not divisible into {g} groups")));
    }
    Ok([
        ConvWeights::zeros(3 * c, c, 1, 1, 0, 1)?,
        ConvWeights::zeros(c, c, 3, 1, 1, g)?,
        ConvWeights::zeros(c, 2 * c, 1, 1, 0, 1)?,
    ])
}

impl ContextModel {
    pub fn zeros(schedule: ContextSchedule, latent_channels: usize, learned_width: bool) -> Result<Self> {
        let phases = (0..schedule.phase_count())
            .map(|_| zero_phase(latent_channels))
            .collect::<Result<_>>()?;
        Ok(Self {
            schedule,
            latent_channels,
            learned_width,
            phases,
        })
    }

    /// Small random weights from an integer seed.
    pub fn random(schedule: ContextSchedule, latent_channels: usize, learned_width: bool, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(schedule, latent_channels, learned_width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for phase in &mut m.phases {
            for (i, conv) in phase.iter_mut().enumerate() {
                let s = conv.weight.shape();
                let gain = if i == 2 { 0.1 } else { std::f32::consts::SQRT_2 };
                let bound = gain * (3.0 / (s.c * s.h * s.w) as f32).sqrt();
                for w in conv.weight.data_mut() {
                    let u = (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32);
                    *w = (2.0 * u - 1.0) * bound;
                }
            }
        }
        Ok(m)
    }

    /// `(mu, q)` for phase `phase`. `partial` holds dequantised latents; only
    /// elements of strictly earlier phases are read.
    pub fn predict(&self, prior: &Tensor, partial: &Tensor, phase: usize) -> Result<(Tensor, Tensor)> {
        let c = self.latent_channels;
        if phase >= self.phases.len() {
            return Err(invalid(format!(
                "phase {phase} out of range for {} phases",
                self.phases.len()
            )));
        }
        let ps = partial.shape();
        if ps.c != c || prior.shape() != Shape::new(ps.n, 2 * c, ps.h, ps.w) {
            return Err(shape(format!(
                "context model with {c} channels got prior {} and latent {ps}",
                prior.shape()
            )));
        }
        let mut masked = partial.clone();
        for n in 0..ps.n {
            for ch in 0..c {
                let plane = masked.plane_mut(n, ch);
                for y in 0..ps.h {
                    for x in 0..ps.w {
                        if self.schedule.phase_of(c, ch, y, x) >= phase {
                            plane[y * ps.w + x] = 0.0;
                        }
                    }
                }
            }
        }
        let input = Tensor::concat_channels(&[prior, &masked])?;
        let [a, b, head] = &self.phases[phase];
        let mut h = conv2d(&input, a)?;
        h.relu_inplace();
        let mut h = conv2d(&h, b)?;
        h.relu_inplace();
        let out = conv2d(&h, head)?;
        let mu = out.slice_channels(0, c)?;
        let q = if self.learned_width {
            let (lo, hi) = (detmath::ln(MIN_WIDTH as f64), detmath::ln(MAX_WIDTH as f64));
            out.slice_channels(c, c)?
                .map(|r| detmath::exp((r as f64).clamp(lo, hi)) as f32)
        } else {
            Tensor::filled(mu.shape(), 1.0)
        };
        Ok((mu, q))
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        store.set_config(format!("{prefix}schedule"), self.schedule.name())?;
        store.set_config(format!("{prefix}latent_channels"), self.latent_channels.to_string())?;
        store.set_config(format!("{prefix}learned_width"), self.learned_width.to_string())?;
        for (p, convs) in self.phases.iter().enumerate() {
            for (i, conv) in convs.iter().enumerate() {
                let s = conv.weight.shape();
                let base = format!("{prefix}phase{p}.conv{i}");
                store.insert_f32(format!("{base}.weight"), vec![s.n, s.c, s.h, s.w], conv.weight.data().to_vec())?;
                store.insert_f32(format!("{base}.bias"), vec![conv.bias.len()], conv.bias.clone())?;
            }
        }
        Ok(())
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let key = |k: &str| store.config_value(&format!("{prefix}{k}"));
        let schedule: ContextSchedule = key("schedule")?.parse()?;
        let c: usize = key("latent_channels")?
            .parse()
            .map_err(|_| config("latent_channels", "not an integer"))?;
        let learned_width = key("learned_width")? == "true";
        let mut m = Self::zeros(schedule, c, learned_width)?;
        for (p, convs) in m.phases.iter_mut().enumerate() {
            for (i, conv) in convs.iter_mut().enumerate() {
                let s = conv.weight.shape();
                let base = format!("{prefix}phase{p}.conv{i}");
                let w = store.get_f32(&format!("{base}.weight"), &[s.n, s.c, s.h, s.w])?;
                conv.weight.data_mut().copy_from_slice(w);
                conv.bias = store.get_f32(&format!("{base}.bias"), &[s.n])?.to_vec();
            }
        }
        Ok(m)
    }
}
