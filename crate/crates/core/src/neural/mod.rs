//! A small tensor-level reverse-mode differentiation engine, enough to train
//! the reference decoder: dense layers, activations, layer normalization,
//! sinusoidal timestep embeddings and AdamW.

mod embedding;
mod optim;
mod params;
mod tape;
mod tensor;

pub use embedding::timestep_embedding;
pub use optim::AdamW;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{CustomOp, Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Epsilon added to the variance in layer normalization.
pub const LAYERNORM_EPS: f64 = 1e-5;
