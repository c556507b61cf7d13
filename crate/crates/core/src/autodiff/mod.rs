//! Dense tensors and a tape-based reverse-mode autodiff engine with the
//! primitives the detector blocks are built from.

mod conv;
pub mod gradcheck;
mod graph;
mod norm;
mod param;
mod pool;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GradCheckSample};
pub use graph::{GradFault, Graph, Var, OP_NAMES};
pub use norm::{BnHyper, BnMode};
pub use param::{Module, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
