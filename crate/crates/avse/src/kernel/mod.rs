//! Dense numeric kernel with reverse-mode differentiation.
//!
//! The kernel covers exactly the operations the enhancement model needs:
//! matmul, 1-D convolution and its transpose, GRU cells, softmax, layer
//! normalization, dropout and the elementwise glue. Values live on a [`Tape`];
//! differentiable ops record a backward closure so a single [`Tape::backward`]
//! call populates gradients for every reachable parameter.
//!
//! Everything is generic over the element type: `f64` for verification and
//! training, `f32` for inference benchmarks.

mod conv;
mod gru;
mod ops;
mod shape;
mod tape;

pub use conv::{conv1d_out_len, conv_transpose1d_out_len};
pub use gru::{gru_cell, GruVars};
pub use shape::{numel, strides};
pub use tape::{Scalar, Tape, Var};
