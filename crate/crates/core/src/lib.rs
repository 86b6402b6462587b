//! Sketch-based rank-k matrix approximation with learned sparse sketches.
//!
//! The crate computes `[A·V]_k · Vᵀ` approximations where `V` spans the row
//! space of a sketch `S·A`, and learns the nonzero values of a sparse
//! CountSketch-style `S` from example matrices by differentiating through a
//! power-iteration SVD.

pub mod cli;
pub mod config;
pub mod diffsvd;
pub mod error;
pub mod evalbench;
pub mod linalg;
pub mod rng;
pub mod scw;
pub mod sketch;
pub mod theory;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SvdFactors};
pub use sketch::{DenseSketch, SketchBlock, SparseSketch};
