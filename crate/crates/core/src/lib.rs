//! Pillar-based LiDAR single object tracking.
//!
//! Point clouds are cropped around the target, bucketed into BEV pillars,
//! pyramid-encoded and scattered into a pseudo-image that a four-stage
//! attention backbone turns into multi-scale features. A similarity neck and
//! a center head decode the next box. The crate also carries an analytic
//! FLOP model of the backbone and One-Pass-Evaluation metrics.

pub mod backbone;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flops;
pub mod geometry;
pub mod harness;
pub mod kitti;
pub mod pepfe;
pub mod pillar;
pub mod synth;

pub use error::{Error, Result};
