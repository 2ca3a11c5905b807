//! Differentiable operations, each implemented as a method on [`Tape`](crate::Tape).

mod activation;
pub(crate) mod conv;
mod dropout;
pub(crate) mod elementwise;
mod linear;
mod loss;
pub(crate) mod norm;
mod pool;
pub(crate) mod reduce;

pub use activation::Activation;
pub use conv::Conv2dSpec;
pub use norm::BatchNormState;

/// Whether an op runs with training-time or inference-time semantics.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
