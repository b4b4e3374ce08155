//! Minimal double-precision neural network engine: dense tensors, the layer
//! set used by the gesture classifiers, reverse-mode backpropagation over a
//! static layer chain, Adam, finite-difference gradient checking and a
//! checkpoint format.

pub mod checkpoint;
mod error;
mod gemm;
mod gradcheck;
mod graph;
pub mod layers;
mod loss;
mod optim;
mod param;
mod tensor;
mod vexp;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::ModelGraph;
pub use layers::conv::{conv1d_forward, conv_output_len};
pub use layers::linear::linear_forward;
pub use layers::Layer;
pub use loss::{cross_entropy_difference, softmax, softmax_cross_entropy};
pub use optim::Adam;
pub use param::Parameter;
pub use tensor::Tensor;
