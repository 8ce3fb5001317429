//! Minimal reverse-mode differentiation for feedforward ReLU networks.
//!
//! A forward pass records a [`Tape`]; [`Tape::backward`] returns gradients
//! with respect to both the flat parameter vector and the input, which is
//! what the perturbation dynamics need.

pub mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use mlp::{AffineLayout, LayerKind, MlpArchitecture, MlpModel};
pub use tape::{cross_entropy, Gradients, Tape};
pub use tensor::Tensor;

pub(crate) use tape::cross_entropy_slice;
pub(crate) use tensor::argmax;
