//! Audio bandwidth extension with differentiable harmonic-plus-noise synthesis.

pub mod bwe;
pub mod controller;
pub mod data;
pub mod dsp;
pub mod error;
pub mod nn;
pub mod pitch;
pub mod synth;
pub mod train;

pub use error::{BweError, Result};
