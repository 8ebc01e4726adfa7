//! Statistical 3D morphable models built from analytic Gaussian-process
//! kernels, with analysis-by-synthesis fitting to images and meshes.

pub mod align;
pub mod error;
pub mod eval;
mod io_util;
pub mod image;
pub mod inference;
pub mod kernels;
pub mod lowrank;
pub mod mesh;
pub mod model;
pub mod registration;
pub mod render;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use io_util::write_atomic;
