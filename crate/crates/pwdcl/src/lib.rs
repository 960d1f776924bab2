// Guards are written as `!(x > 0.0)` so NaN fails closed; the suggested
// `x <= 0.0` form silently passes NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Beamforming kernels index channel slices while also deriving physical
// coordinates from the same index; iterator rewrites obscure that.
#![allow(clippy::needless_range_loop)]

//! Plane-wave ultrasound reconstruction toolkit.
//!
//! The crate covers the full desk-scale pipeline: synthetic RF simulation
//! over scatterer phantoms, delay-and-sum and filtered
//! delay-multiply-and-sum beamforming, coherent plane-wave compounding, an
//! unsupervised coherence-trained convolutional beamformer with exact
//! reverse-mode gradients, image-quality metrics, and the binary file
//! formats and CLI gluing the stages together.

pub mod beamform;
pub mod cli;
pub mod config;
pub mod dcltrain;
pub mod domain;
pub mod error;
pub mod formats;
pub mod net;
pub mod quality;
pub mod simfield;

pub use error::{Error, Result};
