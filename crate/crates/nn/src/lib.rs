//! Minimal CPU convolutional-network toolkit with hand-written backward
//! passes.
//!
//! Everything runs single-threaded per network and is bit-for-bit
//! deterministic for a fixed seed: the same initialization, the same batch
//! order and the same GEMM kernel produce the same weights.

pub mod checkpoint;
pub mod layers;
pub mod loss;
mod ops;
pub mod optim;
mod param;
mod sequential;
mod tensor;

pub use layers::{
    sigmoid, AvgPool2, Conv2d, ConvTranspose2d, GlobalAvgPool, Layer, Linear, MaxPool2, Relu, Sigmoid,
};
pub use optim::{Adam, EarlyStopping, PlateauSchedule, Progress};
pub use param::{Model, Param};
pub use sequential::Sequential;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("invalid checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not fit model: {0}")]
    ParamMismatch(String),
}
