//! Stereo-vision ranging for overtake assistance.
//!
//! A two-camera rig is calibrated from chessboard corners, frames are
//! rectified through per-pixel lookup tables, vehicles (or synthetic
//! fiducials) are detected in both views, matched across the pair and
//! ranged by triangulation. The nearest range drives a five-level signal
//! meant for the traffic behind the host vehicle.
//!
//! Module map:
//!
//! * [`geometry`]: pinhole + Brown-Conrady camera model.
//! * [`calibration`]: sub-pixel corners, Zhang initialisation, LM refinement.
//! * [`rectification`]: rectifying rotations, remap tables, calibration file.
//! * [`detection`]: detector backends and left/right matching.
//! * [`ranging`]: disparity and depth.
//! * [`signaling`]: depth to overtake-safety level.
//! * [`synthsim`]: ground-truth stereo renderer.
//! * [`pipeline`]: frame sources, orchestration, benchmarking, evaluation.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod detection;
mod error;
pub mod geometry;
pub mod pgm;
pub mod pipeline;
pub mod ranging;
pub mod rectification;
pub mod signaling;
pub mod synthsim;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Distortion, ImagePoint, Pose, StereoRig, WorldPoint};

/// 8-bit grayscale raster used throughout the crate.
pub type GrayImage = image::GrayImage;
