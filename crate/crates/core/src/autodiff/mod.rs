//! Minimal reverse-mode differentiation for the model's forward pass.

mod checkpoint;
pub mod gradcheck;
mod tape;

pub use checkpoint::NamedTensors;
pub use tape::{Tape, Var};
