//! Layers, the embedding network and checkpoint IO.

mod checkpoint;
pub mod layers;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{batchnorm2d, conv2d, dropout, l2_normalize_rows, linear, maxpool2d, BatchStats, Mode};
pub use model::{ConvBlockConfig, ConvLayer, DenseLayer, Forward, Model, ModelConfig};
