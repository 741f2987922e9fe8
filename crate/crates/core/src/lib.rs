//! One-layer softmax attention trained to act as an in-context
//! one-nearest-neighbor predictor on the unit sphere.
//!
//! Per-prompt math is generic over [`Scalar`] (`f32` or `f64`); Monte-Carlo
//! estimates, training logs and reports are `f64`. The aliases below fix the
//! scalar to `f64`.

pub mod analysis;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradients;
pub mod mc;
pub mod model;
pub mod scalar;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Point = geometry::UnitVector<f64>;
pub type Prompt = data::PromptSet<f64>;
pub type Weights = model::AttentionWeights<f64>;
pub type Params = model::DiagonalParams<f64>;

