//! Minimal reverse-mode automatic differentiation.
//!
//! Only the operations the separator network needs are provided:
//! same-padded 1D convolution, channel concatenation, ReLU, sigmoid,
//! elementwise product and sum, the `|c - v|` gate and an MSE loss.
//! A [`Graph`] is a tape rebuilt for every forward pass.

mod adam;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("kernel width must be odd for same padding, got {0}")]
    EvenKernel(usize),
    #[error("weight expects {expected} input channels, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("concat_channels needs at least one input")]
    EmptyConcat,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph was already differentiated; record a new forward pass")]
    GraphConsumed,
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("optimizer state does not match the parameter list")]
    OptimizerLayout,
}
