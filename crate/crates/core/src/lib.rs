//! Capsule-network anomaly detection.

pub mod capsnet;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod scoring;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
