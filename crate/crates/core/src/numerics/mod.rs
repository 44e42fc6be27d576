//! Dense tensors, reverse-mode differentiation, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod ops;
mod param;
mod tensor;

pub use adam::AdamState;
pub use ops::{lstm_cell, LstmWeights};
pub use param::{count_learnable, join_name, Module, Param, ParamKind};
pub use tensor::{grad_enabled, no_grad, Tensor};


