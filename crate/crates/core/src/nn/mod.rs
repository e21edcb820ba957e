//! Minimal CPU neural-network kernel.
//!
//! Networks are linear stacks of [`LayerSpec`]s operating on `f32` tensors in
//! row-major order with a leading batch dimension. Gradients are computed by
//! hand-written reverse passes; convolution and dense layers are lowered onto
//! single-threaded SGEMM so results are bit-reproducible.

mod checkpoint;
mod gemm;
mod kernels;
mod network;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, CHECKPOINT_MAGIC};
pub use kernels::{conv1d_forward, dense_forward, dropout, softmax, softmax_ce};
pub(crate) use network::argmax;
pub use network::{Gradients, LayerParams, LayerSpec, Mode, Network, NetworkSpec, ParamStore};
pub use optim::{optimizer_step, Optimizer};
pub use tensor::Tensor;
pub use train::{evaluate_loss, train, train_with_progress, EpochStats, SampleSource, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
