//! Icon appearance similarity: a Siamese CNN trained with a margin triplet
//! loss and adaptive hard-triplet mining, plus the tools built on its
//! embedding (search, perceptual kernels, icon-set optimization).

pub mod data;
mod error;
pub mod eval;
pub mod index;
pub mod nn;
pub mod setopt;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
