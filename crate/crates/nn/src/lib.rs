//! A small CPU tensor engine with tape-based reverse-mode autodiff.
//!
//! Only what encoder-decoder segmentation networks need is provided:
//! same-padded convolutions (optionally dilated), batch norm, ReLU, 2x2 max
//! pooling, nearest and bilinear resampling, channel concatenation, residual
//! add and global average pooling, plus Adam and a binary array format.
//!
//! All kernels are single-threaded and free of data-dependent reduction
//! order, so a forward/backward pass is bitwise reproducible on one machine.

mod graph;
mod kernels;
mod layers;
mod optim;
mod params;
mod serialize;
mod tensor;

pub use graph::{Graph, Var, BN_EPS, BN_MOMENTUM};
pub use kernels::bilinear_taps;
pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, DoubleConv};
pub use optim::Adam;
pub use params::{group_of, Buffer, BufferId, Param, ParamId, ParamStore};
pub use serialize::{read_arrays, write_arrays, NamedArray};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed array file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
