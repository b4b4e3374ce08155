//! Layer set used by the gesture classifiers. Every layer caches what its
//! backward pass needs during `forward`; `backward` consumes that cache.

mod activation;
mod attention;
pub(crate) mod conv;
pub(crate) mod linear;
mod lstm;
mod norm;
mod pool;
mod posenc;
mod reshape;
mod transformer;

pub use activation::{Gelu, Relu};
pub use attention::SelfAttention;
pub use conv::Conv1d;
pub use linear::Linear;
pub use lstm::Lstm;
pub use norm::LayerNorm;
pub use pool::{AttentionPool, LastStep};
pub use posenc::PositionalEncoding;
pub use reshape::{ChannelMerge, ChannelSplit, MergeLastTwo};
pub use transformer::TransformerBlock;

use crate::error::Result;
use crate::param::Parameter;
use crate::tensor::Tensor;

pub trait Layer: Send {
    /// One-line description recorded in checkpoint manifests.
    fn describe(&self) -> String;

    fn forward(&mut self, x: &Tensor) -> Result<Tensor>;

    /// Propagates `dy` back through the layer, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    fn backward(&mut self, dy: &Tensor) -> Result<Tensor>;

    fn parameters(&self) -> Vec<&Parameter> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place numerically stable softmax over a slice.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    crate::vexp::softmax_rows(row, row.len());
}
