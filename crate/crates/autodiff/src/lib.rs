//! Deterministic reverse-mode autodiff over `f64` matrices, with the handful
//! of layers (linear, convolution, layer norm, attention) the tracker needs.
//!
//! Everything is single-threaded and runs in a fixed order, so two runs with
//! the same inputs produce bit-identical values and gradients.

pub mod check;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{ConvGeom, Grads, Graph, SparseRows, Var};
pub use optim::{clip_grad_norm, cosine_scale, AdamW};
pub use params::ParamStore;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

impl ShapeError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}
