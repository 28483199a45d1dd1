//! Entropy coding: scale and probability tables, the range coder, latent
//! quantisation, the hyper-latent prior and the one-shot context model.

pub mod cdf;
pub mod context;
pub mod factorized;
pub mod latent;
pub mod range;

pub use cdf::{build_cdf_tables, CdfTable, CdfTables, ScaleTable, DEFAULT_SUPPORT};
pub use context::{context_phases, phase_map, ContextModel, ContextSchedule};
pub use factorized::{quantize_hyper, FactorizedPrior, DEFAULT_HYPER_SUPPORT};
pub use latent::{dequantize_latent, dequantize_value, estimate_rate_bits, quantize_latent, quantize_value};
pub use range::{range_decode, range_encode, RangeDecoder, RangeEncoder};
