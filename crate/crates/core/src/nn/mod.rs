//! Minimal reverse-mode autodiff, layers, optimizer and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{dense, gru_param_count, gru_step, Dense, Gru, GruWeights, Mlp3, NormAffine};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{logistic, modified_sigmoid, Gradients, Tape, Var};
