//! Sparse voxel-octree radiance fields.
//!
//! Lighting octrees store per-node RGB radiance and extinction density over
//! the unit cube. They are built from RGB-D point clouds, rendered by
//! differentiable cone tracing with level-of-detail sampling, fitted to HDR
//! panoramas by gradient descent, and used to shade virtual objects
//! composited into photographs.

pub mod camera;
pub mod cli;
pub mod error;
pub mod fitter;
pub mod image;
pub mod insertion;
pub mod io;
pub mod metrics;
pub mod octree;
pub mod renderer;
pub mod scenes;

pub use error::{Error, Result};
