//! Closed-world tensor autodiff (conv, transposed conv, elementwise ops,
//! ConvLSTM building blocks, Adam) and the recurrent dynamic-grid estimator
//! built on it.

pub mod adam;
pub mod checkpoint;
pub mod convlstm;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState, Param};
pub use error::{NnError, Result};
pub use graph::{Grads, Graph, NodeId};
pub use model::{forward_sequence, Forward, Model, ModelConfig};
pub use tensor::Tensor;
