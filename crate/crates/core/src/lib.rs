//! Abductive text infilling: given a past and a future observation, produce
//! the hypothesis in between.
//!
//! The crate provides a toy transformer language model with differentiable
//! soft inputs, supervised fine-tuning with optional commonsense-knowledge
//! conditioning, supervised and gradient-based decoders, n-gram generation
//! metrics, and a brute-force oracle for small problems.

pub mod autograd;
pub mod data;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod knowledge;
pub mod lm;
pub mod metrics;
pub mod oracle;
pub mod text;
pub mod training;

pub use error::{Error, Result};
