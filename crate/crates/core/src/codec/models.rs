//! Everything a codec run needs, stored in one weights container.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::level::{level_embedding, GainTable, QualityLevel, COARSE_LEVELS};
use crate::codec::tiles::TILE_PADDED;
use crate::coding::{
    build_cdf_tables, quantize_hyper, CdfTables, ContextModel, ContextSchedule, FactorizedPrior, ScaleTable,
    DEFAULT_HYPER_SUPPORT, DEFAULT_SUPPORT,
};
use crate::error::{config, Result};
use crate::model::{InferenceNet, ModelConfig, Network, Role, TensorData, WeightStore};
use crate::quant::{quantize_model, QuantizedModel};
use crate::tensor::{Shape, Tensor};

const BUNDLE_VERSION: &str = "1";

/// Size presets for synthetic bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 16 channels everywhere, `C_y = 16`, `C_z = 8`.
    Tiny,
    /// Final encoder/decoder configs, `C_y = 192`, `C_z = 64`.
    Final,
}

impl std::str::FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "final" => Ok(Preset::Final),
            _ => Err(config("preset", format!("unknown preset `{s}` (tiny, final)"))),
        }
    }
}

impl Preset {
    pub fn config(self, role: Role, schedule: ContextSchedule) -> ModelConfig {
        let mut cfg = match (self, role) {
            (Preset::Tiny, r) => ModelConfig::small(r, 16, 16, 8),
            (Preset::Final, Role::OuterEncoder) => ModelConfig::final_encoder(),
            (Preset::Final, Role::OuterDecoder) => ModelConfig::final_decoder(),
            (Preset::Final, r) => ModelConfig::hyper_decoder(r),
        };
        cfg.context_schedule = schedule;
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub encoder: Network,
    pub decoder: Network,
    pub scale_decoder: QuantizedModel,
    pub context_decoder: Network,
    pub context: ContextModel,
    pub hyper_prior: FactorizedPrior,
    pub gains: GainTable,
    runtime: Runtime,
}

/// Collapsed networks and probability tables derived from the weights.
#[derive(Clone, Debug)]
pub struct Runtime {
    pub encoder: InferenceNet,
    pub decoder: InferenceNet,
    pub context_decoder: InferenceNet,
    pub tables: CdfTables,
}

/// Smooth synthetic images used to calibrate the hyper prior and the
/// integer scale decoder of synthetic bundles.
fn calibration_tiles(seed: u64, count: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f: [f32; 6] = std::array::from_fn(|_| rng.gen_range(0.002..0.03));
            let p: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f32::consts::TAU));
            let noise = rng.gen_range(0.0..0.1f32);
            let mut t = Tensor::from_fn(Shape::new(1, 3, TILE_PADDED, TILE_PADDED), |_, c, y, x| {
                let v = 0.5 + 0.25 * ((x as f32) * f[c] + p[c]).sin() + 0.2 * ((y as f32) * f[c + 3]).cos();
                v.clamp(0.0, 1.0)
            });
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v + noise * (rng.gen::<f32>() - 0.5)).clamp(0.0, 1.0));
            t
        })
        .collect()
}

impl ModelBundle {
    pub fn new(
        encoder: Network,
        decoder: Network,
        scale_decoder: QuantizedModel,
        context_decoder: Network,
        context: ContextModel,
        hyper_prior: FactorizedPrior,
        gains: GainTable,
    ) -> Result<Self> {
        let cy = encoder.config().latent_channels;
        let cz = encoder.config().hyper_channels;
        let check = |ok: bool, field: &str, what: &str| if ok { Ok(()) } else { Err(config(field, what.to_string())) };
        check(encoder.config().role == Role::OuterEncoder, "encoder", "wrong role")?;
        check(decoder.config().role == Role::OuterDecoder, "decoder", "wrong role")?;
        check(context_decoder.config().role == Role::ContextDecoder, "context_decoder", "wrong role")?;
        check(decoder.config().latent_channels == cy, "decoder", "latent channels differ")?;
        check(scale_decoder.config.latent_channels == cy, "scale_decoder", "latent channels differ")?;
        check(scale_decoder.config.hyper_channels == cz, "scale_decoder", "hyper channels differ")?;
        check(context_decoder.config().latent_channels == cy, "context_decoder", "latent channels differ")?;
        check(context_decoder.config().hyper_channels == cz, "context_decoder", "hyper channels differ")?;
        check(context.latent_channels == cy, "context", "latent channels differ")?;
        check(hyper_prior.channels() == cz, "hyper_prior", "channel count differs")?;
        check(gains.channels() == cy, "gains", "channel count differs")?;
        let runtime = Runtime {
            encoder: encoder.collapse()?,
            decoder: decoder.collapse()?,
            context_decoder: context_decoder.collapse()?,
            tables: build_cdf_tables(&ScaleTable::new(), DEFAULT_SUPPORT)?,
        };
        Ok(Self {
            encoder,
            decoder,
            scale_decoder,
            context_decoder,
            context,
            hyper_prior,
            gains,
            runtime,
        })
    }

    /// Random weights from `seed`; the hyper prior and the integer scale
    /// decoder are calibrated on hyper-latents of synthetic images.
    pub fn synthetic(preset: Preset, schedule: ContextSchedule, seed: u64) -> Result<Self> {
        let cfg = |r| preset.config(r, schedule);
        let encoder = Network::build(&cfg(Role::OuterEncoder), seed)?;
        let decoder = Network::build(&cfg(Role::OuterDecoder), seed.wrapping_add(1))?;
        let scale = Network::build(&cfg(Role::ScaleDecoder), seed.wrapping_add(2))?;
        let context_decoder = Network::build(&cfg(Role::ContextDecoder), seed.wrapping_add(3))?;
        let cy = encoder.config().latent_channels;
        let cz = encoder.config().hyper_channels;
        let context = ContextModel::random(schedule, cy, encoder.config().learned_width, seed.wrapping_add(4))?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
        let gains = GainTable::new(
            (0..COARSE_LEVELS)
                .map(|i| {
                    let base = 2f32.powf((i as f32 - 3.5) / 3.5);
                    (0..cy).map(|_| base * rng.gen_range(0.8..1.25f32)).collect()
                })
                .collect(),
        )?;

        let enc = encoder.collapse()?;
        let mid = level_embedding(QualityLevel::new(35)?);
        let mut samples = Vec::new();
        let mut z_cal = Vec::new();
        for tile in calibration_tiles(seed.wrapping_add(6), 2) {
            let z = enc.forward(&tile, Some(&mid))?.z.expect("encoder emits z");
            let zq = quantize_hyper(&z);
            z_cal.push(Tensor::from_vec(z.shape(), zq.iter().map(|&v| v as f32).collect())?);
            samples.push((z.shape(), zq));
        }
        let hyper_prior = FactorizedPrior::from_samples(cz, DEFAULT_HYPER_SUPPORT, &samples)?;
        let scale_decoder = quantize_model(&scale, &z_cal)?;
        Self::new(encoder, decoder, scale_decoder, context_decoder, context, hyper_prior, gains)
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder.config().latent_channels
    }

    pub fn hyper_channels(&self) -> usize {
        self.encoder.config().hyper_channels
    }

    pub fn schedule(&self) -> ContextSchedule {
        self.context.schedule
    }

    pub fn to_store(&self) -> Result<WeightStore> {
        let mut st = WeightStore::new();
        st.set_config("bundle.version", BUNDLE_VERSION)?;
        self.encoder.save(&mut st, "encoder.")?;
        self.decoder.save(&mut st, "decoder.")?;
        self.scale_decoder.save(&mut st, "scale_decoder.")?;
        self.context_decoder.save(&mut st, "context_decoder.")?;
        self.context.save(&mut st, "context.")?;
        self.hyper_prior.save(&mut st, "hyper_prior.")?;
        st.insert_f32("gains", vec![COARSE_LEVELS, self.gains.channels()], self.gains.flat())?;
        Ok(st)
    }

    pub fn from_store(st: &WeightStore) -> Result<Self> {
        if st.config_value("bundle.version")? != BUNDLE_VERSION {
            return Err(config("bundle.version", "unsupported bundle version"));
        }
        let encoder = Network::load(st, "encoder.")?;
        let cy = encoder.config().latent_channels;
        let g = st.get("gains")?;
        let TensorData::F32(flat) = &g.data else {
            return Err(config("gains", "expected f32 data"));
        };
        if g.shape != [COARSE_LEVELS, cy] {
            return Err(config("gains", "shape does not match the latent"));
        }
        let gains = GainTable::new(flat.chunks(cy).map(<[f32]>::to_vec).collect())?;
        Self::new(
            encoder,
            Network::load(st, "decoder.")?,
            QuantizedModel::load(st, "scale_decoder.")?,
            Network::load(st, "context_decoder.")?,
            ContextModel::load(st, "context.")?,
            FactorizedPrior::load(st, "hyper_prior.")?,
            gains,
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_store()?.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_store(&WeightStore::read(path)?)
    }
}
