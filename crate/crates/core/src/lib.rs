//! Geometric gradient analysis: per-class saliency geometry for detecting
//! adversarial and out-of-distribution inputs.

pub mod attacks;
#[cfg(feature = "cli")]
pub mod cli;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod landscape;
pub mod loda;
pub mod metrics;
pub mod nn;
mod par;
pub mod saliency;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
