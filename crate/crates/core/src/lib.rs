//! Robust relative-depth fine-tuning at desk scale.
//!
//! The crate implements perturbation-consistency training for a disparity
//! network: a corruption synthesizer for the perturbed branch, the
//! affine-invariant consistency and distillation losses, the spatial
//! distance relation constraint, a small from-scratch encoder-decoder with
//! manual backpropagation, synthetic scenes with analytic ground truth,
//! and relative-depth evaluation.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corruption;
pub mod datagen;
pub mod error;
pub mod evalsuite;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod model;
pub mod report;
pub mod rng;
pub mod sdr;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{DisparityMap, ImageBuffer};
pub use rng::Rng;
