//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated; calling
//! [`Graph::backward`] on a scalar node sweeps the tape in reverse and
//! returns gradients for every leaf created with `requires_grad`.
//! Broadcasting is limited to scalar-with-tensor and equal shapes.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{CustomOp, Elementwise, Gradients, Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Largest relative discrepancy between two gradient vectors, with
/// `|a - b| / max(|a|, |b|, floor)` per entry.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
