//! Frame sources: TUM RGB-D style directories and analytic synthetic scenes.

pub mod synthetic;
pub mod tum;

pub use synthetic::{Primitive, SyntheticScene};
pub use tum::TumSequence;
