//! Feature extraction, augmentation, the attention CNN, and training.

pub mod audio;
pub mod augment;
pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod features;
pub mod model;
pub mod rng;
pub mod tensor_file;
pub mod train;

pub use error::{Error, Result};
