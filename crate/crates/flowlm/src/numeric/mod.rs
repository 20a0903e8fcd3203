//! Dense-array arithmetic, reverse-mode gradients, and seeded randomness.

pub mod array;
pub mod grad_check;
pub mod rng;
pub mod tape;

pub use array::Array;
pub use grad_check::grad_check;
pub use rng::Rng;
pub use tape::{Gradients, NodeId, Tape};
