//! Quality levels: interpolated one-hot embedding and channel gains.

use crate::error::{invalid, shape, Result};
use crate::model::LEVEL_CHANNELS;
use crate::tensor::Tensor;

pub const LEVEL_COUNT: usize = 71;
pub const COARSE_LEVELS: usize = LEVEL_CHANNELS;
const FINE_PER_COARSE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualityLevel(u8);

impl QualityLevel {
    pub fn new(l: usize) -> Result<Self> {
        if l >= LEVEL_COUNT {
            return Err(invalid(format!("quality level {l} outside [0, 70]")));
        }
        Ok(Self(l as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Two coarse levels and the weight on each.
    pub fn blend(self) -> [(usize, f32); 2] {
        let l = self.index();
        let (i, r) = (l / FINE_PER_COARSE, l % FINE_PER_COARSE);
        let f = r as f32 / FINE_PER_COARSE as f32;
        [(i, 1.0 - f), ((i + 1).min(COARSE_LEVELS - 1), f)]
    }
}

/// `(1 - f) * onehot(i) + f * onehot(i + 1)` with `i + f = l / 10`.
pub fn level_embedding(l: QualityLevel) -> [f32; COARSE_LEVELS] {
    let mut e = [0.0; COARSE_LEVELS];
    for (i, w) in l.blend() {
        e[i] += w;
    }
    e
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainDirection {
    Forward,
    Inverse,
}

/// Per coarse level, one positive gain per latent channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTable {
    pub gains: Vec<Vec<f32>>,
}

impl GainTable {
    pub fn new(gains: Vec<Vec<f32>>) -> Result<Self> {
        if gains.len() != COARSE_LEVELS {
            return Err(invalid(format!("gain table needs {COARSE_LEVELS} levels, got {}", gains.len())));
        }
        let c = gains[0].len();
        if c == 0 || gains.iter().any(|g| g.len() != c) {
            return Err(invalid("gain rows must share a positive length"));
        }
        if gains.iter().flatten().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(invalid("gains must be positive and finite"));
        }
        Ok(Self { gains })
    }

    pub fn ones(channels: usize) -> Self {
        Self {
            gains: vec![vec![1.0; channels]; COARSE_LEVELS],
        }
    }

    pub fn channels(&self) -> usize {
        self.gains[0].len()
    }

    /// Gain vector of a fine level, blended like the embedding.
    pub fn gain(&self, l: QualityLevel) -> Vec<f32> {
        let mut g = vec![0.0; self.channels()];
        for (i, w) in l.blend() {
            if w == 0.0 {
                continue;
            }
            g.iter_mut().zip(&self.gains[i]).for_each(|(a, b)| *a += w * b);
        }
        g
    }

    pub fn flat(&self) -> Vec<f32> {
        self.gains.concat()
    }
}

pub fn apply_level_gain(y: &Tensor, l: QualityLevel, gt: &GainTable, dir: GainDirection) -> Result<Tensor> {
    if y.shape().c != gt.channels() {
        return Err(shape(format!(
            "latent has {} channels, gain table {}",
            y.shape().c,
            gt.channels()
        )));
    }
    let g = gt.gain(l);
    let scales: Vec<f32> = match dir {
        GainDirection::Forward => g,
        GainDirection::Inverse => g.iter().map(|v| 1.0 / v).collect(),
    };
    let mut out = y.clone();
    out.scale_channels(&scales)?;
    Ok(out)
}
