//! Triplet loss, hard-triplet mining, ADAM and the epoch loop.

mod adam;
mod config;
mod loss;
mod mining;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{lr_at, TrainConfig};
pub use loss::{squared_distance, triplet_hinge, triplet_loss};
pub use mining::{MiningPool, Triplet};
pub use trainer::{embed_eval, resume, train, EpochMetrics, TrainOutcome};
