pub mod codec;
pub mod coding;
pub mod detmath;
pub mod error;
pub mod image_io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod nas;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
pub use image_io::RgbImage;
pub use tensor::{ConvWeights, Shape, Tensor};
