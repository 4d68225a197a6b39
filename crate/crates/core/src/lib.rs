//! Disparity-compensated stereo image codec.
//!
//! A stereo pair is coded as three substreams: the right view on its own, a
//! low-resolution quarter-pel disparity map aligned to the left view, and the
//! residual between the left view and the right view warped into the left
//! geometry. The left residual is entropy coded with a Gaussian model whose
//! scale is conditioned on both causal neighbours and the aligned cross-view
//! prior.
//!
//! The building blocks live in their own modules:
//!
//! * [`image`] raster types and PGM/PPM I/O
//! * [`disparity`] SAD matching cost, semi-global aggregation, sub-pel selection
//! * [`warp`] backward bilinear warping and prior refinement
//! * [`transform`] 8x8 orthonormal DCT and uniform quantization
//! * [`entropy`] range coder and discretized Gaussian models
//! * [`codec`] the three-branch encoder/decoder, bitstream and RD search

pub mod codec;
pub mod disparity;
pub mod entropy;
mod error;
pub mod image;
pub mod transform;
pub mod warp;

pub use error::{Error, Result};
