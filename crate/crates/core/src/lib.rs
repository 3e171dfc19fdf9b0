//! Dense voxel-grid radiance fields.
//!
//! The crate provides an O(N) distortion loss with an exact O(N²) reference,
//! a fused Huber total-variation gradient for dense grids, an Adam step that
//! skips entries whose gradient is exactly zero, scene parameterizations for
//! bounded, forward-facing and unbounded captures, and a training loop that
//! ties them together.

pub mod camera;
pub mod checkpoint;
pub mod cli;
pub mod contraction;
pub mod datasets;
pub mod distortion;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod image_io;
pub mod optimizer;
pub mod rendering;
pub mod selftest;
pub mod trainer;

pub use error::{Error, Result};
