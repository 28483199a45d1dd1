//! The hyperprior model family: configuration, structural graphs, MAC and
//! parameter counting, weights and their container.

pub mod config;
pub mod graph;
pub mod network;
pub mod store;

pub use config::{
    ChainConfig, ModelConfig, ResampleMode, Role, ScaleVariant, StageConfig, LEVEL_CHANNELS,
};
pub use graph::{
    build_model, count_macs_per_pixel, count_params, decoder_kmacs, encoder_kmacs, LayerNode,
    LayerOp, ModelGraph, ReshuffleOp, Tap,
};
pub use network::{init_weights, InferenceNet, InferenceOp, Network, NodeParams, Outputs};
pub use store::{DType, StoredTensor, TensorData, WeightStore};
