//! Curation and evaluation toolkit for monocular depth and surface-normal
//! pseudo-labels.
//!
//! * [`dnesa`] and [`curate`] score candidate depth/normal maps from several
//!   teacher models and keep the best pair per image.
//! * [`metrics`] computes the usual depth and normal benchmark statistics.
//! * [`losses`] evaluates the scale-and-shift-invariant training loss with
//!   analytic gradients and a finite-difference check.
//! * [`net`] is an inference-only hybrid CNN/transformer encoder-decoder
//!   used to validate architectural contracts.
//!
//! [`grid`], [`calculus`] and [`codec`] hold the shared raster type, image
//! operators and file formats.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calculus;
pub mod cli;
pub mod codec;
pub mod curate;
pub mod dnesa;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod report;

pub use error::{Error, Result};
pub use grid::{DepthGrid, Grid, ImageGrid, Mask, NormalGrid};
