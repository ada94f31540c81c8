//! Minimal reverse-mode automatic differentiation.
//!
//! [`Tensor`] values form a DAG as ops are applied; [`Tensor::backward`]
//! walks it in reverse topological order and accumulates gradients into
//! the leaves. Every op validates shapes up front and reports both sides
//! on mismatch.

mod adam;
pub mod checkpoint;
mod core;
mod element;
pub mod gradcheck;
mod nn;
mod ops;

pub use self::adam::{Adam, AdamConfig};
pub use self::checkpoint::{Checkpoint, NamedArray};
pub use self::core::{grad_enabled, no_grad, Tensor};
pub use self::element::Element;
pub use self::nn::{batch_norm2d, bce_loss, conv2d, dropout, embedding, layer_norm, linear, max_pool2d, BCE_CLAMP};
pub use self::ops::{
    add, add_scalar, broadcast_to, concat, div, gelu, matmul, max_axis, mean, mean_axis, mul, neg, permute, relu,
    reshape, scale, sigmoid, slice, softmax, sub, sum, sum_axis, tanh, transpose,
};

#[cfg(test)]
mod tests;
