pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod image;
pub mod iterate;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod pipeline;
pub mod tensor;
pub mod trainer;
pub mod upsample;

pub use error::{Error, Result};
pub use image::{ConfidenceMap, GrayMap, Image, Mask};
