//! Per-frame object detection and left/right association.
//!
//! Two backends implement [`Detector`]: the deterministic [`FiducialDetector`]
//! (connected bright blobs, used by every quantitative test) and
//! [`NeuralDetector`], which wraps a YOLO-style network behind the
//! [`InferenceBackend`] trait.

mod fiducial;
mod matching;
mod neural;

use std::fmt::Write as _;

use image::GrayImage;

pub use fiducial::{detect_fiducial, FiducialConfig, FiducialDetector};
pub use matching::{match_stereo, match_stereo_indices, StereoDetectionPair, DEFAULT_ROW_TOL};
#[cfg(feature = "onnx")]
pub use neural::OnnxBackend;
pub use neural::{
    letterbox, load_labels, non_max_suppression, InferenceBackend, Letterbox, NeuralConfig, NeuralDetector,
    OutputLayout, Tensor,
};

use crate::calibration::Camera;
use crate::geometry::ImagePoint;
use crate::{Error, Result};

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidInput(format!("empty bounding box {b:?}")));
        }
        Ok(b)
    }

    /// Clamps to `[0, width-1] x [0, height-1]`; `None` if nothing is left.
    pub fn clamped(&self, width: usize, height: usize) -> Option<Self> {
        let mx = (width.max(1) - 1) as f64;
        let my = (height.max(1) - 1) as f64;
        Self::new(
            self.x_min.clamp(0.0, mx),
            self.y_min.clamp(0.0, my),
            self.x_max.clamp(0.0, mx),
            self.y_max.clamp(0.0, my),
        )
        .ok()
    }

    pub fn center(&self) -> ImagePoint {
        ImagePoint::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    /// In `[0, 1]`.
    pub confidence: f64,
    pub bbox: BoundingBox,
    /// Ranging target point. The box midpoint for network detections; the
    /// pixel centroid for fiducials.
    pub center: ImagePoint,
}

impl Detection {
    /// Detection whose target point is the box midpoint.
    pub fn new(label: impl Into<String>, confidence: f64, bbox: BoundingBox) -> Self {
        Self {
            label: label.into(),
            confidence: confidence.clamp(0.0, 1.0),
            center: bbox.center(),
            bbox,
        }
    }
}

/// A detector backend. `&mut self` keeps a single inference in flight per
/// instance.
pub trait Detector: Send {
    fn name(&self) -> &str;

    /// Raw detections in backend order.
    fn run(&mut self, frame: &GrayImage) -> Result<Vec<Detection>>;
}

/// Runs a backend and sorts its detections by descending confidence
/// (stable, so equal scores keep backend order).
pub fn detect(frame: &GrayImage, backend: &mut dyn Detector) -> Result<Vec<Detection>> {
    let mut dets = backend.run(frame)?;
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(dets)
}

/// Detection export line: `frame_idx camera label confidence x_min y_min x_max y_max`.
pub fn format_detection(frame_idx: u64, camera: Camera, d: &Detection) -> String {
    let mut s = String::new();
    write!(
        s,
        "{frame_idx} {camera} {} {:.6} {} {} {} {}",
        d.label, d.confidence, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max
    )
    .unwrap();
    s
}
