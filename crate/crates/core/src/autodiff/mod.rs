//! Reverse-mode automatic differentiation.

mod finite_diff;
mod graph;

pub use finite_diff::{finite_diff_check, finite_diff_check_coords, FiniteDiffReport};
pub use graph::{Graph, NodeId, Op, TensorMap};
