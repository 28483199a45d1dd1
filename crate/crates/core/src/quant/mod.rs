//! Integer-only execution of the scale decoder.

pub mod fixed;
pub mod golden;
pub mod model;
pub mod reference;

pub use fixed::{Multiplier, QuantParams};
pub use golden::{model_hash, GoldenCase, GoldenFile};
pub use model::{
    head_to_index, integer_add, integer_conv, quantize_input, quantize_model, QuantizedAdd, QuantizedConv,
    QuantizedLayer, QuantizedModel, QuantizedTensor,
};
pub use reference::reference_forward;
