//! A small CPU layer engine with explicit, per-layer backward passes.
//!
//! Tensors are dense NCHW. Convolutions are lowered to im2col + GEMM
//! (`matrixmultiply`), so the hot path is single-threaded and bit-deterministic.
//! Every layer is generic over [`Scalar`], which lets gradient checks run the
//! exact same code in `f64`.

mod conv;
mod linear;
mod norm;
mod optim;
mod param;
mod pointwise;
mod pool;
mod scalar;
mod sequential;
mod serial;
mod tensor;

pub use conv::{conv_out_extent, Conv2d};
pub use linear::Linear;
pub use norm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use optim::{Adam, AdamConfig};
pub use param::Param;
pub use pointwise::{Activation, Pointwise};
pub use pool::{MaxPool2d, PixelShuffle};
pub use scalar::Scalar;
pub use sequential::{Layer, Sequential};
pub use serial::{decode_state, encode_state};
pub use tensor::{Shape4, Tensor};

/// Whether a forward pass records what its backward pass needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, cached activations.
    Train,
    /// Running statistics, nothing cached.
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("layer {layer}: input {extent:?} is smaller than kernel {kernel}")]
    InputTooSmall {
        layer: String,
        extent: (usize, usize),
        kernel: usize,
    },
    #[error("batch-norm needs at least two values per channel in training mode, got {count}")]
    BatchTooSmall { count: usize },
    #[error("{0} backward called without a cached training-mode forward pass")]
    NoForwardCache(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("state mismatch: {0}")]
    StateMismatch(String),
    #[error("malformed weight blob: {0}")]
    Malformed(String),
}
