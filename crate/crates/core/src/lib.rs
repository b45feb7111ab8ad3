//! Sun-conditioned Gaussian splatting with shadow splatting for a single rigid
//! object observed under changing illumination.

pub mod appearance;
pub mod checkpoint;
pub mod cloud;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod geom;
pub mod image;
pub mod keyframes;
pub mod loss;
pub mod pipeline;
pub mod mlp;
pub mod optim;
pub mod raster;
pub mod render;
pub mod shadow;
pub mod train;

pub use error::{Error, Result};
