//! Desk-scale human-centric vision pipeline: masked-autoencoder pretraining
//! of a ViT encoder, four dense task heads (pose heatmaps, part
//! segmentation, relative depth, surface normals), a procedural
//! synthetic-human renderer, and the matching evaluation protocols.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod heads;
pub mod image;
pub mod mae;
pub mod model;
pub mod metrics;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
pub use image::Image;
