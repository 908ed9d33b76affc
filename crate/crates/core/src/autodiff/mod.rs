//! Minimal reverse-mode automatic differentiation over dense arrays.

mod array;
pub mod gradcheck;
mod params;
mod tape;

pub use array::Array;
pub use params::{ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
