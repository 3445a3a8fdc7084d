//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let loss = x.square();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

// Arithmetic on `Var` is fallible (shape checks), so it cannot use the operator traits.
#![allow(clippy::should_implement_trait)]

mod error;
mod kernels;
mod tape;
mod tensor;

pub mod gradcheck;

pub use error::{AutodiffError, Result};
pub use tape::{concat_cols, Gradients, Tape, UnaryOp, Var};
pub use tensor::Tensor;
