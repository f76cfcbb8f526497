//! Bundle adjustment of large image blocks, serial or split into camera
//! sub-blocks that are adjusted in parallel and kept consistent through
//! their shared points.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod blockio;
pub mod consensus;
pub mod error;
pub mod model;
mod par;
pub mod partition;
pub mod robust;
pub mod solver;
pub mod triangulate;

pub use error::{Error, Result};
pub use par::with_threads;
