//! Depth from horizontal disparity of matched detections.

use serde::Deserialize;

use crate::detection::StereoDetectionPair;
use crate::{Error, Result};

/// Where the pixel focal length comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FPixelSource {
    /// From the horizontal field of view and the frame width.
    #[default]
    Fov,
    /// From the rectified intrinsics of a loaded calibration.
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangingConfig {
    /// Camera separation, cm.
    pub baseline: f64,
    /// Physical lens focal length, mm. Informational: the field of view
    /// determines the pixel focal length.
    pub focal_length: f64,
    /// Horizontal field of view, degrees.
    pub alpha: f64,
    /// Pixels.
    pub frame_width: usize,
    /// Pixels. Smaller disparities are reported as too far to range.
    pub min_disparity: f64,
    pub f_pixel_source: FPixelSource,
    /// Rectified focal length in pixels; filled in when a calibration is
    /// loaded and used when `f_pixel_source` is `calibration`.
    #[serde(skip)]
    pub calibrated_f_pixel: Option<f64>,
}

impl Default for RangingConfig {
    fn default() -> Self {
        Self {
            baseline: 9.0,
            focal_length: 2.6,
            alpha: 60.0,
            frame_width: 640,
            min_disparity: 0.5,
            f_pixel_source: FPixelSource::Fov,
            calibrated_f_pixel: None,
        }
    }
}

impl RangingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return Err(Error::Config(format!("baseline must be > 0, got {}", self.baseline)));
        }
        if !(self.alpha > 0.0 && self.alpha < 180.0) {
            return Err(Error::InvalidFov(self.alpha));
        }
        if self.frame_width < 2 {
            return Err(Error::Config(format!(
                "frame_width must be >= 2, got {}",
                self.frame_width
            )));
        }
        if !(self.min_disparity > 0.0) {
            return Err(Error::Config(format!(
                "min_disparity must be > 0, got {}",
                self.min_disparity
            )));
        }
        Ok(())
    }

    /// Pixel focal length according to `f_pixel_source`.
    pub fn f_pixel(&self) -> Result<f64> {
        match self.f_pixel_source {
            FPixelSource::Fov => focal_mm_to_pixels(self),
            FPixelSource::Calibration => self.calibrated_f_pixel.ok_or(Error::CalibrationMissing),
        }
    }
}

/// `(frame_width / 2) / tan(alpha / 2)`.
pub fn focal_mm_to_pixels(cfg: &RangingConfig) -> Result<f64> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 180.0) {
        return Err(Error::InvalidFov(cfg.alpha));
    }
    Ok((cfg.frame_width as f64 / 2.0) / (cfg.alpha.to_radians() / 2.0).tan())
}

/// Signed horizontal offset `x_left - x_right`.
pub fn disparity(x_left: f64, x_right: f64) -> f64 {
    x_left - x_right
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    /// Pixels.
    pub disparity: f64,
    /// Pixels.
    pub f_pixel: f64,
    /// cm.
    pub depth: f64,
    pub pair: StereoDetectionPair,
}

pub fn find_depth(pair: &StereoDetectionPair, cfg: &RangingConfig) -> Result<DepthEstimate> {
    let f_pixel = cfg.f_pixel()?;
    depth_with_focal(pair, cfg, f_pixel)
}

/// [`find_depth`] with a precomputed pixel focal length.
pub fn depth_with_focal(pair: &StereoDetectionPair, cfg: &RangingConfig, f_pixel: f64) -> Result<DepthEstimate> {
    let d = disparity(pair.left.center.x, pair.right.center.x);
    if !(d.abs() >= cfg.min_disparity) {
        return Err(Error::DisparityTooSmall {
            disparity: d,
            min: cfg.min_disparity,
        });
    }
    Ok(DepthEstimate {
        disparity: d,
        f_pixel,
        depth: (cfg.baseline * f_pixel / d).abs(),
        pair: pair.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{BoundingBox, Detection};

    fn pair_at(xl: f64, xr: f64) -> StereoDetectionPair {
        let mk = |x: f64| Detection::new("car", 1.0, BoundingBox::new(x - 4.0, 10.0, x + 4.0, 20.0).unwrap());
        StereoDetectionPair {
            left: mk(xl),
            right: mk(xr),
        }
    }

    fn cfg(width: usize, alpha: f64) -> RangingConfig {
        RangingConfig {
            frame_width: width,
            alpha,
            ..RangingConfig::default()
        }
    }

    #[test]
    fn focal_conversion() {
        assert!((focal_mm_to_pixels(&cfg(2, 90.0)).unwrap() - 1.0).abs() < 1e-12);
        let f = focal_mm_to_pixels(&cfg(640, 60.0)).unwrap();
        assert!((f - 320.0 * 3f64.sqrt()).abs() < 1e-9);
        assert!((f - 554.256).abs() < 5e-4);
        assert!(matches!(
            focal_mm_to_pixels(&cfg(640, 180.0)),
            Err(Error::InvalidFov(_))
        ));
        assert!(matches!(focal_mm_to_pixels(&cfg(640, 0.0)), Err(Error::InvalidFov(_))));
    }

    #[test]
    fn disparity_is_signed() {
        assert_eq!(disparity(400.0, 300.0), 100.0);
        assert_eq!(disparity(300.0, 300.0), 0.0);
        assert_eq!(disparity(300.0, 400.0), -100.0);
    }

    #[test]
    fn depth_example() {
        let c = cfg(640, 60.0);
        let f = 320.0 * 3f64.sqrt();
        // d = 9 f / 72 = 69.282...
        let d = 9.0 * f / 72.0;
        let est = find_depth(&pair_at(300.0 + d, 300.0), &c).unwrap();
        assert!((est.depth - 72.0).abs() < 1e-9);
        assert!((est.disparity - 69.282).abs() < 1e-3);
    }

    #[test]
    fn depth_is_linear_in_baseline() {
        let c = cfg(640, 60.0);
        let p = pair_at(350.0, 300.0);
        let a = find_depth(&p, &c).unwrap().depth;
        let b = find_depth(&p, &RangingConfig { baseline: 18.0, ..c }).unwrap().depth;
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn tiny_disparity_rejected() {
        let c = cfg(640, 60.0);
        assert!(matches!(
            find_depth(&pair_at(300.0, 300.0), &c),
            Err(Error::DisparityTooSmall { .. })
        ));
        assert!(matches!(
            find_depth(&pair_at(300.4, 300.0), &c),
            Err(Error::DisparityTooSmall { .. })
        ));
        // Negative disparity still ranges, as an absolute value.
        assert!(find_depth(&pair_at(300.0, 310.0), &c).unwrap().depth > 0.0);
    }

    #[test]
    fn calibration_source() {
        let mut c = RangingConfig {
            f_pixel_source: FPixelSource::Calibration,
            ..RangingConfig::default()
        };
        assert!(matches!(c.f_pixel(), Err(Error::CalibrationMissing)));
        c.calibrated_f_pixel = Some(700.0);
        assert_eq!(find_depth(&pair_at(370.0, 300.0), &c).unwrap().depth, 90.0);
    }

    #[test]
    fn validation() {
        assert!(RangingConfig::default().validate().is_ok());
        assert!(RangingConfig {
            baseline: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RangingConfig {
            frame_width: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RangingConfig {
            min_disparity: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(matches!(
            RangingConfig {
                alpha: 200.0,
                ..Default::default()
            }
            .validate(),
            Err(Error::InvalidFov(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nearer_means_larger_disparity(d1 in 0.5f64..500.0, d2 in 0.5f64..500.0) {
                prop_assume!(d1 != d2);
                let c = cfg(640, 60.0);
                let (hi, lo) = if d1 > d2 { (d1, d2) } else { (d2, d1) };
                let near = find_depth(&pair_at(100.0 + hi, 100.0), &c).unwrap().depth;
                let far = find_depth(&pair_at(100.0 + lo, 100.0), &c).unwrap().depth;
                prop_assert!(near < far);
            }

            #[test]
            fn depth_times_disparity(
                xl in 0.0f64..640.0, xr in 0.0f64..640.0,
                baseline in 1.0f64..50.0, alpha in 10.0f64..170.0,
            ) {
                let c = RangingConfig { baseline, alpha, ..RangingConfig::default() };
                if let Ok(est) = find_depth(&pair_at(xl, xr), &c) {
                    let lhs = est.depth * est.disparity.abs();
                    let rhs = baseline * est.f_pixel;
                    prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
                }
            }
        }
    }
}
