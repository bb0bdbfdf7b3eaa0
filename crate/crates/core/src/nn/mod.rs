//! Minimal reverse-mode differentiation engine, the dual-path I/Q
//! reconstruction network, and its optimizers.

mod graph;
pub mod ops;
mod optim;
mod tensor;
mod unet;

pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::{Adam, MomentumDecay, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_HALF_LIFE, MOMENTUM};
pub use tensor::Tensor;
pub use unet::{Architecture, BoundNetwork, ReconNetwork};
