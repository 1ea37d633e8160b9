//! Tensor engine with reverse-mode differentiation, and the encoder model built on it.

pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod tensor;

pub use graph::{Grads, Graph, Var};
pub use model::{encode, init_params, project, reconstruct, Bound, EncoderConfig, ModelParams};
pub use tensor::{matmul, Real, Tensor};
