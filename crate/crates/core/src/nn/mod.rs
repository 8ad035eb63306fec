//! Dense FP32 tensors, a reverse-mode tape and the adaptive-moment optimizer.

pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{AttnGeom, Graph, Var};
pub use optim::OptimizerState;
pub use tensor::{ParamSet, Tensor};

#[cfg(test)]
mod gradcheck;
