//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! Every backward rule is itself written with differentiable operations, so
//! gradients can be differentiated again (`create_graph = true`). This is what
//! gradient-penalty critics need: the penalty depends on the input gradient of
//! the critic and is then minimized with respect to the critic's weights.

mod element;
mod graph;
mod kernels;
pub mod ops;
mod optim;
mod tensor;

pub use element::Element;
pub use graph::{grad, is_grad_enabled, no_grad, Var};
pub use kernels::{conv2d as conv2d_tensor, Conv2dGeometry};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Shape, Tensor};
