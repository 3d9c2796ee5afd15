//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! Every value is a row-major `f64` [`Tensor`]. Differentiable computations are
//! recorded on a [`Tape`]; each recorded op returns a [`Var`] handle, and
//! [`Tape::backward`] walks the tape once in reverse to fill in gradients.

mod conv;
pub mod gradcheck;
pub mod io;
mod tape;
mod tensor;

pub use conv::{conv2d_output_extent, deconv2d_output_extent};
pub use tape::{Tape, Var, Window};
pub use tensor::Tensor;
