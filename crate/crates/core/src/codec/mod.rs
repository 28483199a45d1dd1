//! Tiled image codec: tiles, quality levels, the container format and the
//! encode/decode pipeline.

pub mod bitstream;
pub mod level;
pub mod models;
pub mod pipeline;
pub mod tiles;

pub use bitstream::{parse_header, serialize_header, Bitstream, BitstreamHeader, TilePayload};
pub use level::{apply_level_gain, level_embedding, GainDirection, GainTable, QualityLevel, COARSE_LEVELS, LEVEL_COUNT};
pub use models::{ModelBundle, Preset};
pub use pipeline::{
    decode_image, decode_image_pipelined, decode_image_traced, encode_image, encode_image_traced, TileTrace,
};
pub use tiles::{extract_padded_tile, partition_tiles, place_tile, TileGrid, TileRect, TILE_CORE, TILE_MARGIN, TILE_PADDED};
