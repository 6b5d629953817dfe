//! Trainable mapping from low-band audio, f0 and loudness to synthesizer controls.

pub mod config;
pub mod model;

pub use config::{ModelConfig, Variant};
pub use model::{extract_features, f0_input, Batch, BatchItem, Features, LatentSequence, Model, Outputs, PolyControls};
