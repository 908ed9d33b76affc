//! Path-instruction compatibility scoring for vision-and-language navigation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the default training precision.

pub mod analysis;
pub mod autodiff;
pub mod curriculum;
pub mod envgraph;
pub mod error;
pub mod evalmetrics;
pub mod featurize;
pub mod mining;
pub mod model;
pub mod scalar;
pub mod seeds;
pub mod world;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

/// Default training precision.
pub type Real = f32;
pub type Array = autodiff::Array<Real>;
pub type Array64 = autodiff::Array<f64>;
