//! Minimal reverse-mode automatic differentiation over `f64` feature maps.
//!
//! The op set is exactly what the back-projection networks need:
//! strided and transposed convolutions, channel-wise PReLU, elementwise
//! add/sub and channel concatenation. Everything runs in double precision
//! so finite-difference gradient checks are meaningful.

mod conv;
mod params;
mod tape;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGeometry};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Tape, Var, VarGrads};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("channels [{start}, {start}+{count}) out of range for {channels} channels")]
    ChannelRange { start: usize, count: usize, channels: usize },
    #[error("kernel {kernel} (stride {stride}, pad {pad}) does not fit a {h}x{w} input")]
    Geometry {
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("cannot concatenate an empty list")]
    EmptyConcat,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}
