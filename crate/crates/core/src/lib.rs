//! Moving-object detection for RGB-D sequences by occlusion accumulation,
//! coupled with a bi-square weighted dense visual odometry whose residuals are
//! restricted to the detected background.
//!
//! * [`geometry`]: pinhole model, SE(3) exp/log and the pixel warp
//! * [`image`]: depth/intensity buffers, bilinear sampling, pyramids
//! * [`occlusion`]: occlusion map, accumulation, truncation, masking,
//!   depth compensation and new-area prediction
//! * [`odometry`]: robust Levenberg-Marquardt pose estimation
//! * [`dataset`]: TUM-layout sequences, trajectories and PNG I/O
//! * [`synth`]: deterministic ray-cast scenes with ground truth
//! * [`eval`]: F1 and relative pose error
//! * [`pipeline`]: per-sequence orchestration used by the CLI

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod labeling;
pub mod occlusion;
pub mod odometry;
pub mod pipeline;
pub mod synth;

mod par;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pixel, RigidTransform, Twist};
pub use image::{DepthImage, Image, IntensityImage, Mask};
