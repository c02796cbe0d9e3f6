//! Images as multiresolution spatial hash tables decoded per pixel by a tiny
//! two-layer network.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the common choices. Training and the CLI use `f32`, gradient
//! checks use `f64`.

pub mod analysis;
pub mod error;
pub mod flow;
pub mod format;
pub mod grid;
pub mod image;
pub mod interp;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use grid::{spatial_hash, GridConfig, IndexMap, LevelGeometry, VertexIndex};
pub use image::ImageBuffer;
pub use model::{backward, decode, DecodedSample, HashField, HashGrid, PixelDecoder};
pub use scalar::Real;

pub type HashGrid32 = HashGrid<f32>;
pub type HashGrid64 = HashGrid<f64>;
pub type PixelDecoder32 = PixelDecoder<f32>;
pub type PixelDecoder64 = PixelDecoder<f64>;
pub type HashField32 = HashField<f32>;
pub type HashField64 = HashField<f64>;
