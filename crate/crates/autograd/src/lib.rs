//! Minimal reverse-mode automatic differentiation engine.
//!
//! Everything is 64-bit floats in row-major order. The operation vocabulary
//! is fixed (matmul, elementwise ops, softmax, layer norm, embedding lookup,
//! cross entropy, reshape/transpose, slicing/concat, dropout) so the backward
//! pass stays small enough to audit by hand. Graphs are built per forward
//! pass and discarded after `backward`.

mod check;
mod error;
mod graph;
mod optim;
mod tensor;

pub use check::grad_check;
pub use error::{AutogradError, Result};
pub use graph::{Graph, NodeId};
pub use optim::AdamState;
pub use tensor::Tensor;
