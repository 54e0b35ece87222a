//! Spiking neural networks trained across vertically partitioned parties.

pub mod codec;
pub mod data;
pub mod energy;
pub mod error;
pub mod neuro;
pub mod tensor;
pub mod vfl;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
