//! Reverse-mode automatic differentiation over dense real64 tensors.
//!
//! Build a [`Tape`], feed it constants and parameters, compose primitives on
//! the returned [`Var`] handles, then call [`backward`] on a scalar root.
//!
//! ```
//! use kvae_autodiff::{backward, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let p = tape.param("p", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), true).unwrap();
//! let root = p.sum().unwrap();
//! let grads = backward(&tape, root).unwrap();
//! assert_eq!(grads.param("p").unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

mod backward;
mod check;
mod error;
pub mod kernels;
mod tape;
mod tensor;

pub use backward::{backward, Gradients};
pub use check::grad_check;
pub use error::{AdError, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
