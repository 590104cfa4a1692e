//! Camera localization by rigid alignment of two predicted point clouds.
//!
//! A predictor emits, per pixel, a depth (lifted into a camera-frame cloud),
//! a global-frame scene coordinate and a confidence weight. A weighted Kabsch
//! solve aligns the two clouds into a camera pose. Because the solve is
//! differentiable, the predictor can be trained from pose labels alone.
//!
//! Module map:
//! - [`geometry`]: poses, pinhole intrinsics, back-projection and projection
//! - [`alignment`]: weighted Kabsch solver and residuals
//! - [`autodiff`]: fixed-vocabulary reverse-mode tape, Kabsch VJP, gradient checks
//! - [`losses`]: position, rotation, consistency and reprojection losses
//! - [`robust`]: the pose strategies (plain, masked, RANSAC, PnP, weighted)
//! - [`sim`]: synthetic scenes, trajectories, rendering and file formats
//! - [`train`]: trainable predictors, Adam, training and finetuning
//! - [`eval`]: metrics, reports and experiment runners

pub mod alignment;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod robust;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
