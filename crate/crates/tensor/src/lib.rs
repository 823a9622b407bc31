//! Dense row-major tensors, a recording tape for reverse-mode
//! differentiation, and the Adam / SGD optimizers used to train the
//! sentence autoencoders.
//!
//! The tape is generic over [`Real`], so the same model code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

pub mod check;
mod error;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};
pub use params::{Bindings, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Tensor};
