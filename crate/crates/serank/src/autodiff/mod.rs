//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! The op set is exactly what the ranking models need: matrix products,
//! elementwise arithmetic and activations, masked per-channel reductions over
//! the document axis, and a handful of structural ops (transpose, concat,
//! slice, gather) for groupwise scoring and cross-query batch statistics.
//! Graph construction and backward are single-threaded per instance;
//! independent graphs may live on different threads.

mod grad_check;
mod graph;
mod tensor;

pub use grad_check::{grad_check, GradCheckFailure, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
