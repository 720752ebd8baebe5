use image::GrayImage;

use super::{BoundingBox, Detection, Detector};
use crate::geometry::ImagePoint;
use crate::Result;

pub const FIDUCIAL_LABEL: &str = "fiducial";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiducialConfig {
    /// Pixels at or above this intensity are foreground.
    pub threshold: u8,
    /// Components smaller than this many pixels are dropped.
    pub min_area: usize,
}

impl Default for FiducialConfig {
    fn default() -> Self {
        Self {
            threshold: 128,
            min_area: 16,
        }
    }
}

/// Bright-blob detector: threshold, 4-connected components, one detection
/// per component. Output is sorted by `x_min`, then `y_min`.
///
/// Boxes are inclusive pixel extents, the target point is the pixel
/// centroid and the confidence is the fill ratio of the box. Components
/// only one pixel wide or tall cannot form a box and are skipped.
pub fn detect_fiducial(frame: &GrayImage, cfg: &FiducialConfig) -> Vec<Detection> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let data = frame.as_raw();
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();

    for start in 0..w * h {
        if visited[start] || data[start] < cfg.threshold {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0usize, 0usize);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            sx += x;
            sy += y;
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if !visited[j] && data[j] >= cfg.threshold {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area < cfg.min_area {
            continue;
        }
        let Ok(bbox) = BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64) else {
            continue;
        };
        let box_area = (x1 - x0 + 1) * (y1 - y0 + 1);
        out.push(Detection {
            label: FIDUCIAL_LABEL.to_string(),
            confidence: area as f64 / box_area as f64,
            bbox,
            center: ImagePoint::new(sx as f64 / area as f64, sy as f64 / area as f64),
        });
    }
    out.sort_by(|a, b| {
        a.bbox
            .x_min
            .total_cmp(&b.bbox.x_min)
            .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
    });
    out
}

#[derive(Debug, Clone, Default)]
pub struct FiducialDetector {
    pub config: FiducialConfig,
}

impl FiducialDetector {
    pub fn new(config: FiducialConfig) -> Self {
        Self { config }
    }
}

impl Detector for FiducialDetector {
    fn name(&self) -> &str {
        "fiducial"
    }

    fn run(&mut self, frame: &GrayImage) -> Result<Vec<Detection>> {
        Ok(detect_fiducial(frame, &self.config))
    }
}
