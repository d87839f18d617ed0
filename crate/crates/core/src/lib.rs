//! Differentiable Gaussian-joint rendering of mmWave radar heatmaps and
//! analysis-by-synthesis pose fitting.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfar;
pub mod cli;
pub mod dipr;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fitter;
pub mod geometry;
pub mod grad;
pub mod losses;
pub mod renderer;
mod seeds;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
