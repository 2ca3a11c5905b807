//! Dense tensors with a reverse-mode gradient tape.
//!
//! The engine covers the operations needed by a convolutional temporal
//! attention classifier: 2-D convolution, max pooling, batch normalization,
//! pointwise activations, reductions, broadcast products, dense layers,
//! dropout and softmax cross-entropy. Everything is generic over [`Real`] so
//! training can run in `f32` while gradient checks run in `f64`.

mod error;
pub mod gradcheck;
pub mod ops;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{Activation, BatchNormState, Conv2dSpec, Mode};
pub use optim::{adam_step, AdamConfig, AdamState, Parameter};
pub use scalar::{lit, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
