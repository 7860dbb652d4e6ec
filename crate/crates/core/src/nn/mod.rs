//! A small reverse-mode differentiation engine and the three surrogate
//! networks trained on top of it: a convolutional autoencoder, a
//! sliding-window LSTM and a feed-forward network.

pub mod adam;
pub mod cae;
pub mod checkpoint;
pub mod ffnn;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod lstm;
pub mod norm;
pub mod params;
pub mod train;

use thiserror::Error;

pub use adam::Adam;
pub use cae::Cae;
pub use ffnn::{Ffnn, Regression};
pub use graph::{Graph, Gradients, Tensor, Var};
pub use layers::{Activation, Conv, Dense, LstmCell, LEAKY_SLOPE};
pub use lstm::{build_sliding_windows, Lstm, SlidingWindows};
pub use norm::MinMax;
pub use params::{ParamId, ParamStore};
pub use train::{split_by_parameter, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}
