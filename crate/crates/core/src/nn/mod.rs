//! A small dense-tensor engine with reverse-mode gradients.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use optim::{OptimizerKind, ParamId, ParamStore};
pub use tensor::Tensor;
