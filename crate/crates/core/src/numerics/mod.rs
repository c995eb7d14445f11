//! Deterministic numeric foundations: dense `f64` tensors, a splittable RNG,
//! layer primitives, a recorded-graph reverse-mode differentiator, and a
//! central finite-difference oracle used to validate every gradient path.
//!
//! Design rules shared by everything below:
//!
//! * `f64` everywhere; no fast-math, no architecture-dependent reductions.
//! * Transcendentals go through [`libm`] so results are bit-identical across
//!   platforms and identical with or without `std`.
//! * Reductions run in fixed index order, so repeated runs are bitwise equal.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod rng;
pub mod tensor;

pub(crate) mod fmath;

pub use gradcheck::{finite_diff_gradient, l2_relative_error};
pub use graph::{Gradients, Graph, NodeId};
pub use rng::Rng;
pub use tensor::Tensor;

use alloc::string::String;
use core::fmt;

/// Errors raised by the numeric layer.
///
/// Every variant carries enough context to point at the offending operation
/// without a debugger: op name, shapes, or the coordinate that misbehaved.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Constructing a tensor whose data length does not match its shape.
    ShapeDataMismatch { expected: usize, got: usize },
    /// An operation received operands with incompatible shapes.
    ShapeMismatch { op: &'static str, detail: String },
    /// An operation that requires a non-empty input got an empty one.
    EmptyInput { op: &'static str },
    /// A rate/probability parameter outside its valid range.
    InvalidRate { op: &'static str, rate: f64 },
    /// A function evaluation produced a non-finite value.
    NonFinite { op: &'static str, coordinate: usize },
    /// A node id that does not belong to the queried graph.
    NodeOutOfGraph { index: usize, len: usize },
    /// Backward was started from a non-scalar node without a seed cotangent.
    NonScalarBackward { len: usize },
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::ShapeDataMismatch { expected, got } => write!(
                f,
                "tensor shape expects {expected} elements but data has {got}"
            ),
            NumericsError::ShapeMismatch { op, detail } => {
                write!(f, "{op}: incompatible shapes: {detail}")
            }
            NumericsError::EmptyInput { op } => write!(f, "{op}: empty input"),
            NumericsError::InvalidRate { op, rate } => {
                write!(f, "{op}: rate {rate} outside [0, 1)")
            }
            NumericsError::NonFinite { op, coordinate } => {
                write!(f, "{op}: non-finite value at coordinate {coordinate}")
            }
            NumericsError::NodeOutOfGraph { index, len } => {
                write!(f, "node id {index} outside graph of {len} nodes")
            }
            NumericsError::NonScalarBackward { len } => write!(
                f,
                "backward from a node of {len} elements requires a seed cotangent"
            ),
        }
    }
}

impl core::error::Error for NumericsError {}
