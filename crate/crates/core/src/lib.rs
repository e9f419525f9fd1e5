//! Imitation learning with incremental-gain-stability guarantees.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod learning;
pub mod linalg;
pub mod policies;
pub mod rng;
pub mod stability;

pub use error::{Error, Result};
