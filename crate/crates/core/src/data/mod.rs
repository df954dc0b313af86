//! Manifests, image IO, splitting, augmentation and the synthetic generator.

mod dataset;
mod image;
mod manifest;
mod split;
pub mod synth;
mod transform;

pub use dataset::Dataset;
#[cfg(feature = "png")]
pub use image::encode_png;
pub use image::{decode_image, decode_pgm, encode_pgm, image_hw, read_image, write_pgm};
pub use manifest::{load_manifest, save_manifest, IconRecord, Manifest, Split};
pub use split::{allocate, stratified_split, DEFAULT_FRACTIONS};
pub use synth::{generate_synthetic_dataset, StyleSpec};
pub use transform::{
    augment, corner_crop, crop_size_for, eval_view, resize_bilinear, train_view, Augmentation, Corner,
};
