//! Monocular video depth estimation with piecewise-planar regions.
//!
//! The pipeline segments a video into spatio-temporal regions, describes
//! each region slice with appearance, motion and layout features, predicts
//! a unary depth per slice with a random forest, estimates which region
//! boundaries are occlusions, and finally fits one plane per slice by
//! minimizing an energy that couples neighbors across non-occluding
//! boundaries.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod forest;
pub mod geometry;
pub mod imaging;
pub mod mrf;
pub mod occlusion;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
