//! Face dataset augmentation toolkit: landmark-driven pose estimation,
//! textured head rendering at novel yaws, expression neutralization,
//! feature conditioning, template score fusion, and evaluation metrics.

pub mod assets;
pub mod augment;
pub mod config;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod landmarks;
pub mod mesh;
pub mod raster;
pub mod render;
pub mod synth;
