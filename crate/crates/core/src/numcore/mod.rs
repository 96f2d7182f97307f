//! Dense tensors, a reverse-mode tape, and a finite-difference oracle.

mod fmath;
mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many, DEFAULT_EPS};
pub use graph::{Elementwise, Graph, Var};
pub use tensor::Tensor;
