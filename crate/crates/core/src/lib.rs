//! Multi-facet visual-semantic embedding on synthetic worlds.

// Validation uses `!(x > 0.0)` so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod config;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod linear;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod selfcheck;
pub mod semspace;
pub mod synthgen;
pub mod trainer;

pub use error::{ErrorKind, MufiError, Result};
