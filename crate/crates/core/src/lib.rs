//! Next-frame video prediction with learned polar representations.
//!
//! Frames are mapped to pairs of convolutional channels treated as complex
//! coefficients; each coefficient keeps its current amplitude and has its
//! phase advanced by the change observed over the previous frame interval.
//! The crate provides those predictors together with linear-extrapolation,
//! direct-CNN, copy and block-matching baselines, the training loop, image
//! quality metrics and learned-filter diagnostics.

mod binio;

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod pgm;
pub mod polar;
pub mod predictors;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Real, Tensor};
