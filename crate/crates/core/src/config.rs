//! Pipeline configuration file.
//!
//! A TOML document; every key is optional and falls back to the default
//! shown here.
//!
//! ```toml
//! target_fps = 20.0
//!
//! [ranging]
//! baseline = 9.0            # cm
//! focal_length = 2.6        # mm, informational
//! alpha = 60.0              # horizontal field of view, degrees
//! frame_width = 640         # px
//! min_disparity = 0.5       # px
//! f_pixel_source = "fov"    # or "calibration"
//!
//! [thresholds]
//! breakpoints = [115.0, 231.0, 346.0, 462.0]   # cm
//! hysteresis = 5.0                             # cm
//!
//! [detector]
//! backend = "fiducial"      # or "neural"
//! threshold = 128           # fiducial: foreground intensity
//! min_area = 16             # fiducial: px
//! model = ""                # neural: ONNX file
//! labels = ""               # neural: class names, one per line
//! score_threshold = 0.5     # neural
//! iou_threshold = 0.45      # neural
//! input_size = 640          # neural: square network input, px
//! layout = "yolov8"         # neural: or "yolov5"
//! row_tol = 10.0            # stereo matching row tolerance, px
//!
//! [io]
//! calibration = ""          # calibration file; empty for none
//! rectify = true            # rectify when a calibration is given
//! source = "directory"      # or "synthetic"
//! input = ""                # frame directory or scene file
//! frames = 10               # synthetic: number of frames
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::detection::{FiducialConfig, OutputLayout, DEFAULT_ROW_TOL};
use crate::ranging::RangingConfig;
use crate::signaling::SignalThresholds;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorBackend {
    #[default]
    Fiducial,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutName {
    YoloV5,
    #[default]
    YoloV8,
}

impl From<LayoutName> for OutputLayout {
    fn from(l: LayoutName) -> Self {
        match l {
            LayoutName::YoloV5 => OutputLayout::YoloV5,
            LayoutName::YoloV8 => OutputLayout::YoloV8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub backend: DetectorBackend,
    pub threshold: u8,
    pub min_area: usize,
    pub model: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub input_size: usize,
    pub layout: LayoutName,
    pub row_tol: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let fid = FiducialConfig::default();
        Self {
            backend: DetectorBackend::Fiducial,
            threshold: fid.threshold,
            min_area: fid.min_area,
            model: None,
            labels: None,
            score_threshold: 0.5,
            iou_threshold: 0.45,
            input_size: 640,
            layout: LayoutName::YoloV8,
            row_tol: DEFAULT_ROW_TOL,
        }
    }
}

impl DetectorConfig {
    pub fn fiducial(&self) -> FiducialConfig {
        FiducialConfig {
            threshold: self.threshold,
            min_area: self.min_area,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.row_tol >= 0.0) {
            return Err(Error::Config(format!("row_tol must be >= 0, got {}", self.row_tol)));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("iou_threshold", self.iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.backend == DetectorBackend::Neural && (self.model.is_none() || self.labels.is_none()) {
            return Err(Error::Config("neural backend needs `model` and `labels`".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Directory,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub calibration: Option<PathBuf>,
    pub rectify: bool,
    pub source: SourceKind,
    pub input: Option<PathBuf>,
    pub frames: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            calibration: None,
            rectify: true,
            source: SourceKind::Directory,
            input: None,
            frames: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_fps: f64,
    pub ranging: RangingConfig,
    pub thresholds: SignalThresholds,
    pub detector: DetectorConfig,
    pub io: IoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_fps: 20.0,
            ranging: RangingConfig::default(),
            thresholds: SignalThresholds::default(),
            detector: DetectorConfig::default(),
            io: IoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fps > 0.0 && self.target_fps.is_finite()) {
            return Err(Error::Config(format!(
                "target_fps must be > 0, got {}",
                self.target_fps
            )));
        }
        self.ranging.validate()?;
        self.thresholds.validate()?;
        self.detector.validate()
    }

    /// Relative paths are resolved against `base` (the config file's
    /// directory).
    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.io.calibration,
            &mut self.io.input,
            &mut self.detector.model,
            &mut self.detector.labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
