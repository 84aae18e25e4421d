//! Dense f64 tensors and a static computation graph with reverse-mode
//! differentiation.
//!
//! The graph is built once per architecture and re-bound per call: leaves
//! (parameters and inputs) are declared with fixed shapes, every op is
//! shape-checked at construction, and [`Graph::forward`] /
//! [`Graph::backward`] work on per-call workspaces so concurrent
//! evaluations of one graph are safe.
//!
//! Everything is 64-bit. Broadcasting is limited to bias-add.

mod graph;
mod tensor;

pub use graph::{Bindings, Evaluation, Gradients, Graph, GraphError, NodeId};
pub use tensor::{Tensor, TensorError};
