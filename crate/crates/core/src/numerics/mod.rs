//! Dense tensors, parameter storage and reverse-mode differentiation.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use tensor::{gelu_scalar, matmul, softmax, Tensor};
