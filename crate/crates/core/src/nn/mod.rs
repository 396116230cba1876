//! Dense feed-forward networks with explicit forward and backward passes.

mod checkpoint;
mod matrix;
mod network;

pub use checkpoint::{Checkpoint, CHECKPOINT_HEADER};
pub(crate) use checkpoint::format_f64;
pub use matrix::Matrix;
pub(crate) use matrix::squared_distance;
pub use network::{
    Activation, DenseLayer, DenseNetwork, ForwardPass, LayerGradient, LayerSpec, NetworkGradients,
};
