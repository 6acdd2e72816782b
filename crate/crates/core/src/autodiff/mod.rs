//! Reverse-mode differentiation over dense `f64` matrices.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{check_inputs, check_parameters, finite_diff_check, Coordinate, GradCheckReport};
pub use graph::{softmax_rows, Axis, GradPiece, Gradients, Graph, Var};
pub use params::{Decay, Param, ParamId, ParameterStore, Tensor};


#[cfg(test)]
pub(crate) use graph::sigmoid;
