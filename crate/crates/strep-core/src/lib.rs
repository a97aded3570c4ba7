//! Unsupervised global registration of temporal point-cloud sequences.
//!
//! A sequence of 2D/3D scans is aligned into one world frame by jointly
//! optimizing per-frame latent vectors (fused through a learnable temporal
//! recurrence), a shared pose-decoder network, and an occupancy classifier,
//! against a Chamfer neighbor loss plus a global occupancy BCE loss.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
