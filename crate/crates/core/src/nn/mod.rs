//! Minimal differentiable kernel: tensors, a reverse-mode tape, dense and
//! attention layers, Adam, and checkpoint I/O.

pub mod checkpoint;
pub mod functional;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use functional::{dense_forward, mha_forward, softmax_row, MhaWeights};
pub use layers::{Activation, Dense, Mha, MhaConfig, Mlp};
pub use params::{AdamConfig, Gradients, ParamId, ParamKind, ParameterStore};
pub use tape::{AttnShape, Tape, Var};
pub use tensor::Tensor2D;

#[cfg(test)]
mod gradcheck_tests;
