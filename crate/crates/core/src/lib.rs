//! Thought-space machine translation.
//!
//! Sentences of a language are embedded into a fixed-length vector space by a
//! transformer encoder with masked mean pooling, decoded back by a GRU
//! language decoder, and translation is learned as a small feedforward map
//! between the thought-spaces of two languages.

pub mod numerics;
pub mod text;

pub mod encoder;
pub mod decoder;
pub mod translator;
pub mod synthetic;
pub mod eval;
pub mod error;
pub mod history;
pub mod params;
mod train;

pub use error::{ModelError, Result};
pub use history::{EpochRecord, TrainHistory};
