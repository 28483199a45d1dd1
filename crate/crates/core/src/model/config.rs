use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::coding::ContextSchedule;
use crate::error::{config, Result};
use crate::layers::BlockSpec;

/// Quality-level conditioning channels concatenated to the outer networks.
pub const LEVEL_CHANNELS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    OuterEncoder,
    OuterDecoder,
    ScaleDecoder,
    ContextDecoder,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::OuterEncoder => "outer_encoder",
            Role::OuterDecoder => "outer_decoder",
            Role::ScaleDecoder => "scale_decoder",
            Role::ContextDecoder => "context_decoder",
        }
    }

    pub fn is_outer(self) -> bool {
        matches!(self, Role::OuterEncoder | Role::OuterDecoder)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "outer_encoder" => Role::OuterEncoder,
            "outer_decoder" => Role::OuterDecoder,
            "scale_decoder" => Role::ScaleDecoder,
            "context_decoder" => Role::ContextDecoder,
            _ => return Err(config("role", format!("unknown role `{s}`"))),
        })
    }
}

/// How the networks change resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResampleMode {
    /// Haar wavelet next to a 1x1 convolution (collapsible).
    Haar,
    /// Plain space-to-depth / depth-to-space next to a 1x1 convolution.
    PixelShuffle,
    /// 3x3 stride-2 convolution down, 3x3 sub-pixel convolution up.
    StridedConv,
}

/// Which learned scale families are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScaleVariant {
    None,
    ConvScaleOnly,
    SpatialOnly,
    Both,
}

impl ScaleVariant {
    pub fn conv_scales(self) -> bool {
        matches!(self, ScaleVariant::ConvScaleOnly | ScaleVariant::Both)
    }

    pub fn spatial_scales(self) -> bool {
        matches!(self, ScaleVariant::SpatialOnly | ScaleVariant::Both)
    }
}

macro_rules! text_enum {
    ($ty:ident, $field:literal, $($var:ident => $s:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$var => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = crate::Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)+
                    _ => Err(config($field, format!("unknown value `{s}`"))),
                }
            }
        }
    };
}

text_enum!(ResampleMode, "resample", Haar => "haar", PixelShuffle => "pixel_shuffle", StridedConv => "strided_conv");
text_enum!(ScaleVariant, "scales", None => "none", ConvScaleOnly => "convscale", SpatialOnly => "spatial", Both => "both");

/// `(R, E, F)` of one CS-Chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChainConfig {
    pub repeats: usize,
    pub expand_3x3: usize,
    pub expand_1x1: usize,
}

impl ChainConfig {
    pub const fn new(repeats: usize, expand_3x3: usize, expand_1x1: usize) -> Self {
        Self {
            repeats,
            expand_3x3,
            expand_1x1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StageConfig {
    pub channels: usize,
    pub chain1: ChainConfig,
    pub chain2: ChainConfig,
}

impl StageConfig {
    pub const fn new(channels: usize, chain1: ChainConfig, chain2: ChainConfig) -> Self {
        Self {
            channels,
            chain1,
            chain2,
        }
    }

    pub fn block_spec(&self, chain: usize) -> Result<BlockSpec> {
        let c = if chain == 0 { self.chain1 } else { self.chain2 };
        BlockSpec::new(self.channels, c.expand_3x3, c.expand_1x1)
    }
}

/// Hyperparameters fully determining one sub-network.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub role: Role,
    pub stages: Vec<StageConfig>,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub level_channels: usize,
    pub context_schedule: ContextSchedule,
    pub resample: ResampleMode,
    pub scales: ScaleVariant,
    pub learned_width: bool,
}

pub const DEFAULT_LATENT_CHANNELS: usize = 192;
pub const DEFAULT_HYPER_CHANNELS: usize = 64;

impl ModelConfig {
    fn with_stages(role: Role, stages: Vec<StageConfig>) -> Self {
        Self {
            role,
            stages,
            latent_channels: DEFAULT_LATENT_CHANNELS,
            hyper_channels: DEFAULT_HYPER_CHANNELS,
            level_channels: LEVEL_CHANNELS,
            context_schedule: ContextSchedule::Grid2x2,
            resample: ResampleMode::Haar,
            scales: ScaleVariant::Both,
            learned_width: true,
        }
    }

    /// Final searched outer encoder.
    pub fn final_encoder() -> Self {
        Self::with_stages(
            Role::OuterEncoder,
            vec![
                StageConfig::new(64, ChainConfig::new(1, 1, 2), ChainConfig::new(1, 4, 2)),
                StageConfig::new(96, ChainConfig::new(2, 1, 1), ChainConfig::new(3, 4, 1)),
                StageConfig::new(96, ChainConfig::new(2, 1, 1), ChainConfig::new(4, 1, 1)),
            ],
        )
    }

    /// Final searched outer decoder.
    pub fn final_decoder() -> Self {
        Self::with_stages(
            Role::OuterDecoder,
            vec![
                StageConfig::new(160, ChainConfig::new(3, 1, 1), ChainConfig::new(2, 1, 2)),
                StageConfig::new(64, ChainConfig::new(2, 1, 1), ChainConfig::new(1, 4, 2)),
                StageConfig::new(32, ChainConfig::new(2, 2, 2), ChainConfig::new(1, 3, 2)),
            ],
        )
    }

    /// Hyper decoder skeleton shared by the scale and context decoders.
    pub fn hyper_decoder(role: Role) -> Self {
        assert!(!role.is_outer(), "hyper decoder role expected");
        Self::with_stages(
            role,
            vec![
                StageConfig::new(96, ChainConfig::new(2, 1, 1), ChainConfig::new(0, 1, 1)),
                StageConfig::new(64, ChainConfig::new(2, 1, 1), ChainConfig::new(0, 1, 1)),
            ],
        )
    }

    /// Uniform small family for tests and quick experiments.
    pub fn small(role: Role, channels: usize, latent: usize, hyper: usize) -> Self {
        let stage = StageConfig::new(channels, ChainConfig::new(1, 1, 1), ChainConfig::new(1, 1, 1));
        let n = if role.is_outer() { 3 } else { 2 };
        let mut cfg = Self::with_stages(role, vec![stage; n]);
        cfg.latent_channels = latent;
        cfg.hyper_channels = hyper;
        cfg
    }

    /// Expected stage count for the role.
    pub fn expected_stages(&self) -> usize {
        if self.role.is_outer() {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != self.expected_stages() {
            return Err(config(
                "stages",
                format!("{} needs {} stages, got {}", self.role, self.expected_stages(), self.stages.len()),
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let field = |name: &str| format!("stage{}.{name}", i + 1);
            if s.channels == 0 {
                return Err(config(field("channels"), "must be positive"));
            }
            for (j, ch) in [s.chain1, s.chain2].iter().enumerate() {
                let spec = BlockSpec {
                    channels: s.channels,
                    expand_3x3: ch.expand_3x3,
                    expand_1x1: ch.expand_1x1,
                };
                spec.validate()
                    .map_err(|e| config(field(&format!("chain{}", j + 1)), e.to_string()))?;
            }
        }
        if self.latent_channels == 0 {
            return Err(config("latent_channels", "must be positive"));
        }
        if self.hyper_channels == 0 {
            return Err(config("hyper_channels", "must be positive"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("role".into(), self.role.to_string());
        m.insert("stages".into(), self.stages.len().to_string());
        for (i, s) in self.stages.iter().enumerate() {
            let p = format!("stage{}", i + 1);
            m.insert(format!("{p}.channels"), s.channels.to_string());
            for (j, c) in [s.chain1, s.chain2].iter().enumerate() {
                m.insert(
                    format!("{p}.chain{}", j + 1),
                    format!("{},{},{}", c.repeats, c.expand_3x3, c.expand_1x1),
                );
            }
        }
        m.insert("latent_channels".into(), self.latent_channels.to_string());
        m.insert("hyper_channels".into(), self.hyper_channels.to_string());
        m.insert("level_channels".into(), self.level_channels.to_string());
        m.insert("context_schedule".into(), self.context_schedule.to_string());
        m.insert("resample".into(), self.resample.to_string());
        m.insert("scales".into(), self.scales.to_string());
        m.insert("learned_width".into(), self.learned_width.to_string());
        m
    }

    pub fn from_kv(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| m.get(k).ok_or_else(|| config(k, "missing"));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| config(k, "not a non-negative integer"))
        };
        let n = num("stages")?;
        let mut stages = Vec::with_capacity(n);
        for i in 1..=n {
            let p = format!("stage{i}");
            let mut chains = [ChainConfig::new(0, 1, 1); 2];
            for (j, slot) in chains.iter_mut().enumerate() {
                let k = format!("{p}.chain{}", j + 1);
                let parts: Vec<usize> = get(&k)?
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| config(&k, "expected R,E,F")))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(config(&k, "expected R,E,F"));
                }
                *slot = ChainConfig::new(parts[0], parts[1], parts[2]);
            }
            stages.push(StageConfig::new(num(&format!("{p}.channels"))?, chains[0], chains[1]));
        }
        let cfg = Self {
            role: get("role")?.parse()?,
            stages,
            latent_channels: num("latent_channels")?,
            hyper_channels: num("hyper_channels")?,
            level_channels: num("level_channels")?,
            context_schedule: get("context_schedule")?.parse()?,
            resample: get("resample")?.parse()?,
            scales: get("scales")?.parse()?,
            learned_width: get("learned_width")?
                .parse()
                .map_err(|_| config("learned_width", "expected true or false"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_configs_validate() {
        ModelConfig::final_encoder().validate().unwrap();
        ModelConfig::final_decoder().validate().unwrap();
        ModelConfig::hyper_decoder(Role::ScaleDecoder).validate().unwrap();
    }

    #[test]
    fn zero_stage_config_rejected() {
        let mut cfg = ModelConfig::final_decoder();
        cfg.stages.clear();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("stages"), "{err}");
    }

    #[test]
    fn bad_field_is_named() {
        let mut cfg = ModelConfig::final_decoder();
        cfg.stages[1].chain2.expand_3x3 = 7;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("stage2.chain2"), "{err}");
        let mut cfg = ModelConfig::final_encoder();
        cfg.stages[2].channels = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("stage3.channels"));
    }

    #[test]
    fn kv_roundtrip() {
        let mut cfg = ModelConfig::final_decoder();
        cfg.context_schedule = ContextSchedule::Checkerboard;
        cfg.resample = ResampleMode::StridedConv;
        cfg.scales = ScaleVariant::SpatialOnly;
        cfg.learned_width = false;
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let mut kv = cfg.to_kv();
        kv.insert("resample".into(), "bilinear".into());
        assert!(ModelConfig::from_kv(&kv).is_err());
    }
}
