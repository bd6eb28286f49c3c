//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Only what the spike denoisers and the coordinate network need: 2-D
//! convolution, spatial shifts and rotations, pooling, linear layers, leaky
//! ReLU, the complex Gabor activation and squared-error losses, plus Adam and
//! a binary checkpoint format. All reductions run in a fixed order so that
//! reruns are bit-identical.

pub mod checkpoint;
mod error;
mod graph;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{DiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamState};
pub use params::{NetworkParams, ParamBuilder};
pub use scalar::Scalar;
pub use tensor::Tensor;
