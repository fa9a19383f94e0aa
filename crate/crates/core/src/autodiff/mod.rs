//! Dense reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations over tensors borrowed from a
//! [`ParamStore`]. Nodes that cannot reach a trainable parameter skip
//! gradient work entirely; frozen parameters pass gradients through to
//! their inputs but never receive one.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use graph::{Graph, NodeId, OpKind, OpSpec, LN_EPS};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};
