//! Tile-based high-resolution monocular metric depth estimation.
//!
//! A coarse network sees the whole image at patch resolution, a fine
//! network sees native-resolution tiles, and a guided fusion network merges
//! both per tile using globally attended coarse features. Consistency-aware
//! training penalizes disagreement on overlapping tiles; consistency-aware
//! inference folds overlapping tiles into a running-mean canvas that is fed
//! back as guidance.

pub mod dataio;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
