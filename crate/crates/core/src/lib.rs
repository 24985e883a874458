//! Skeleton-based action recognition with temporal-sliding LSTM ensembles.
//!
//! The crate covers the whole pipeline: keypoint sequences and their JSONL
//! format, trajectory stabilization, a synthetic gesture corpus, the LSTM
//! models with hand-derived gradients, training/evaluation, and the
//! gesture-to-effect timeline emitter.

pub mod checkpoint;
pub mod dense;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod numeric;
pub mod skeleton;
pub mod stabilizer;
pub mod synth;
pub mod train;
pub mod ts_lstm;
pub mod vfx;

pub use error::{Error, Result};
