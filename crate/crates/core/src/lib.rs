//! Deterministic CPU engine for narrow fixed-width MLPs.
//!
//! The crate provides:
//!
//! - a bf16/f32 numeric core whose GEMMs pin an exact accumulation order,
//!   making every result bitwise reproducible;
//! - an unfused reference implementation of inference and training that
//!   serves as the correctness oracle;
//! - a fused executor that streams one block of batch rows through all
//!   layers while the block stays cache resident, bitwise equal to the
//!   reference path for any tile size and worker count;
//! - input encodings (identity padding and a trainable multiresolution
//!   hash grid);
//! - an analytical roofline model for the fused and unfused schemes.

pub mod bf16;
pub mod encoding;
pub mod error;
pub mod fused;
pub mod gemm;
pub mod matrix;
pub mod mlp;
pub mod pack;
pub mod roofline;
#[doc(hidden)]
pub mod testsupport;

pub use bf16::Bf16;
pub use error::{Error, Result};
pub use matrix::{MatrixBf16, MatrixF32};
pub use pack::{pack_weights, PackedWeights};
