//! Frame-by-frame orchestration: rectify, detect, match, range, signal.

mod bench;
mod eval;
mod source;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

pub use bench::{bench_latency, LatencyReport, StageStats};
pub use eval::{evaluate_error_table, parse_error_table, truncate_2dp, ErrorReport, ErrorRow};
pub use source::{DirectorySource, Frame, FrameError, FrameSource, SyntheticSource, VecSource};

use crate::config::{DetectorBackend, DetectorConfig, PipelineConfig};
use crate::detection::{detect, match_stereo, Detection, Detector, FiducialDetector, StereoDetectionPair};
use crate::ranging::{depth_with_focal, DepthEstimate, RangingConfig};
use crate::rectification::StereoMaps;
use crate::signaling::{step, SignalLevel, SignalThresholds};
use crate::{Error, Result};

/// Stage names in processing order.
pub const STAGES: [&str; 5] = ["rectify", "detect", "match", "range", "signal"];

/// Wall-clock milliseconds per stage, in [`STAGES`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageLatencies {
    pub stages: [f64; 5],
    /// Whole frame, including bookkeeping between stages.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_idx: u64,
    pub timestamp_ms: f64,
    pub left_detections: Vec<Detection>,
    pub right_detections: Vec<Detection>,
    pub pairs: Vec<StereoDetectionPair>,
    /// Ranged pairs, in pair order. Pairs below the minimum disparity are
    /// left out.
    pub depths: Vec<DepthEstimate>,
    pub signal: SignalLevel,
    pub latency: StageLatencies,
}

impl FrameResult {
    pub fn nearest_depth(&self) -> Option<f64> {
        self.depths.iter().map(|d| d.depth).min_by(f64::total_cmp)
    }

    /// Equality ignoring the timing fields.
    pub fn same_content(&self, other: &FrameResult) -> bool {
        FrameResult {
            latency: StageLatencies::default(),
            ..self.clone()
        } == FrameResult {
            latency: StageLatencies::default(),
            ..other.clone()
        }
    }
}

pub type FrameRecord = std::result::Result<FrameResult, FrameError>;

/// Tab-separated result lines: `frame_idx label depth_cm disparity_px
/// signal_level`, one per ranged target, or a single line with `-` fields
/// when nothing was ranged.
pub fn format_frame_result(r: &FrameResult) -> String {
    let mut s = String::new();
    if r.depths.is_empty() {
        writeln!(s, "{}\t-\t-\t-\t{}", r.frame_idx, r.signal).unwrap();
    }
    for d in &r.depths {
        writeln!(
            s,
            "{}\t{}\t{:.3}\t{:.3}\t{}",
            r.frame_idx, d.pair.left.label, d.depth, d.disparity, r.signal
        )
        .unwrap();
    }
    s
}

/// Error line in the result stream: `frame_idx error - - message`.
pub fn format_frame_error(e: &FrameError) -> String {
    format!(
        "{}\terror\t-\t-\t{}\n",
        e.frame_idx,
        e.error.to_string().replace(['\t', '\n'], " ")
    )
}

/// Builds a detector backend from configuration.
pub fn build_detector(cfg: &DetectorConfig) -> Result<Box<dyn Detector>> {
    match cfg.backend {
        DetectorBackend::Fiducial => Ok(Box::new(FiducialDetector::new(cfg.fiducial()))),
        DetectorBackend::Neural => build_neural(cfg),
    }
}

#[cfg(feature = "onnx")]
fn build_neural(cfg: &DetectorConfig) -> Result<Box<dyn Detector>> {
    use crate::detection::{load_labels, NeuralConfig, NeuralDetector, OnnxBackend};
    let missing = |what: &str| Error::Config(format!("neural backend needs `{what}`"));
    let model = cfg.model.as_deref().ok_or_else(|| missing("model"))?;
    let labels = load_labels(cfg.labels.as_deref().ok_or_else(|| missing("labels"))?)?;
    let backend = OnnxBackend::load(model, (cfg.input_size, cfg.input_size))?;
    let ncfg = NeuralConfig {
        labels,
        score_threshold: cfg.score_threshold,
        iou_threshold: cfg.iou_threshold,
        layout: cfg.layout.into(),
    };
    Ok(Box::new(NeuralDetector::new(backend, ncfg)?))
}

#[cfg(not(feature = "onnx"))]
fn build_neural(_: &DetectorConfig) -> Result<Box<dyn Detector>> {
    Err(Error::BackendLoadFailure(
        "neural backend requested but this build has no ONNX support (enable the `onnx` feature)".into(),
    ))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Processing state for one stream. Configuration and maps are fixed at
/// construction; only the signal level changes between frames.
pub struct Pipeline {
    maps: Option<StereoMaps>,
    left: Box<dyn Detector>,
    right: Box<dyn Detector>,
    ranging: RangingConfig,
    f_pixel: f64,
    thresholds: SignalThresholds,
    row_tol: f64,
    target_fps: f64,
    signal: SignalLevel,
    frame_size: Option<(u32, u32)>,
    last_idx: Option<u64>,
}

impl Pipeline {
    /// `maps` are required when the configuration names a calibration file
    /// with rectification enabled, or takes the focal length from the
    /// calibration. One detector instance serves each camera.
    pub fn new(
        cfg: &PipelineConfig,
        maps: Option<StereoMaps>,
        mut make_detector: impl FnMut() -> Result<Box<dyn Detector>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let wants_rectify = cfg.io.rectify && cfg.io.calibration.is_some();
        if wants_rectify && maps.is_none() {
            return Err(Error::CalibrationMissing);
        }
        let mut ranging = cfg.ranging;
        if let Some(m) = &maps {
            ranging.calibrated_f_pixel = Some(m.rectified.new_intrinsics.fx);
        }
        let f_pixel = ranging.f_pixel()?;
        Ok(Self {
            maps: if cfg.io.rectify { maps } else { None },
            left: make_detector()?,
            right: make_detector()?,
            ranging,
            f_pixel,
            thresholds: cfg.thresholds,
            row_tol: cfg.detector.row_tol,
            target_fps: cfg.target_fps,
            signal: SignalLevel::NoTarget,
            frame_size: None,
            last_idx: None,
        })
    }

    /// Configured pipeline using the configured detector backend.
    pub fn from_config(cfg: &PipelineConfig, maps: Option<StereoMaps>) -> Result<Self> {
        Self::new(cfg, maps, || build_detector(&cfg.detector))
    }

    pub fn signal(&self) -> SignalLevel {
        self.signal
    }

    pub fn f_pixel(&self) -> f64 {
        self.f_pixel
    }

    fn check_frame(&mut self, frame: &Frame) -> Result<()> {
        if self.last_idx.is_some_and(|last| frame.idx <= last) {
            return Err(Error::InvalidInput(format!(
                "frame index {} does not follow {}",
                frame.idx,
                self.last_idx.unwrap()
            )));
        }
        self.last_idx = Some(frame.idx);
        let size = frame.left.dimensions();
        let expected = *self.frame_size.get_or_insert(size);
        for found in [size, frame.right.dimensions()] {
            if found != expected {
                return Err(Error::DimensionMismatch {
                    expected: (expected.0 as usize, expected.1 as usize),
                    found: (found.0 as usize, found.1 as usize),
                });
            }
        }
        Ok(())
    }

    /// Runs every stage on one frame. On error the signal level is left
    /// unchanged.
    pub fn process(&mut self, frame: &Frame) -> Result<FrameResult> {
        let start = Instant::now();
        self.check_frame(frame)?;
        let mut stages = [0.0; 5];

        let t = Instant::now();
        let rectified = match &self.maps {
            Some(m) => Some(m.rectify_pair(&frame.left, &frame.right)?),
            None => None,
        };
        let (left_img, right_img) = match &rectified {
            Some((l, r)) => (l, r),
            None => (&frame.left, &frame.right),
        };
        stages[0] = ms(t.elapsed());

        let t = Instant::now();
        let (left_dets, right_dets) = {
            let (l, r) = (&mut self.left, &mut self.right);
            rayon::join(|| detect(left_img, l.as_mut()), || detect(right_img, r.as_mut()))
        };
        let (left_dets, right_dets) = (left_dets?, right_dets?);
        stages[1] = ms(t.elapsed());

        let t = Instant::now();
        let pairs = match_stereo(&left_dets, &right_dets, self.row_tol);
        stages[2] = ms(t.elapsed());

        let t = Instant::now();
        let mut depths = Vec::with_capacity(pairs.len());
        for p in &pairs {
            match depth_with_focal(p, &self.ranging, self.f_pixel) {
                Ok(d) => depths.push(d),
                Err(Error::DisparityTooSmall { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        stages[3] = ms(t.elapsed());

        let t = Instant::now();
        let nearest = depths.iter().map(|d| d.depth).min_by(f64::total_cmp);
        let signal = step(self.signal, nearest, &self.thresholds);
        stages[4] = ms(t.elapsed());

        self.signal = signal;
        Ok(FrameResult {
            frame_idx: frame.idx,
            timestamp_ms: frame.timestamp_ms,
            left_detections: left_dets,
            right_detections: right_dets,
            pairs,
            depths,
            signal,
            latency: StageLatencies {
                stages,
                total: ms(start.elapsed()),
            },
        })
    }
}

/// Streams results in source order. Per-frame failures become error
/// records and the stream continues. Unbounded sources are paced to the
/// configured frame rate.
pub fn run_pipeline<S: FrameSource>(pipeline: Pipeline, source: S) -> PipelineRun<S> {
    let pace = source.is_unbounded();
    PipelineRun {
        pipeline,
        source,
        pace,
        next_due: None,
    }
}

pub struct PipelineRun<S> {
    pipeline: Pipeline,
    source: S,
    pace: bool,
    next_due: Option<Instant>,
}

impl<S> PipelineRun<S> {
    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }
}

impl<S: FrameSource> Iterator for PipelineRun<S> {
    type Item = FrameRecord;

    fn next(&mut self) -> Option<FrameRecord> {
        if self.pace {
            let period = Duration::from_secs_f64(1.0 / self.pipeline.target_fps);
            let now = Instant::now();
            if let Some(due) = self.next_due {
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            self.next_due = Some(self.next_due.map_or(now, |d| d.max(now)) + period);
        }
        let frame = match self.source.next_frame()? {
            Ok(f) => f,
            Err(e) => return Some(Err(e)),
        };
        Some(self.pipeline.process(&frame).map_err(|error| FrameError {
            frame_idx: frame.idx,
            error,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, StereoRig, WorldPoint};
    use crate::synthsim::{SyntheticScene, SyntheticTarget};
    use image::GrayImage;

    fn rig() -> StereoRig {
        let f = 320.0 * 3f64.sqrt();
        StereoRig::ideal(CameraIntrinsics::new(f, f, 320.0, 240.0), 9.0)
    }

    fn disc_scene(z: f64) -> SyntheticScene {
        SyntheticScene::new(rig(), (640, 480)).with_target(SyntheticTarget::disc(
            WorldPoint::new(4.5, 0.0, z),
            8.0,
            255,
        ))
    }

    #[test]
    fn disc_at_150() {
        let cfg = PipelineConfig::default();
        let p = Pipeline::from_config(&cfg, None).unwrap();
        let results: Vec<_> = run_pipeline(p, SyntheticSource::new(disc_scene(150.0), Some(5), 20.0)).collect();
        assert_eq!(results.len(), 5);
        for r in results {
            let r = r.unwrap();
            assert_eq!(r.pairs.len(), 1);
            let d = r.nearest_depth().unwrap();
            assert!((d - 150.0).abs() < 1.5, "{d}");
            assert_eq!(r.signal, SignalLevel::Caution);
        }
    }

    #[test]
    fn empty_scene_gives_no_target() {
        let p = Pipeline::from_config(&PipelineConfig::default(), None).unwrap();
        let src = SyntheticSource::new(SyntheticScene::new(rig(), (640, 480)), Some(3), 20.0);
        for r in run_pipeline(p, src) {
            let r = r.unwrap();
            assert_eq!(r.signal, SignalLevel::NoTarget);
            assert_eq!(format_frame_result(&r), format!("{}\t-\t-\t-\tNoTarget\n", r.frame_idx));
        }
    }

    #[test]
    fn calibration_required_when_configured() {
        let mut cfg = PipelineConfig::default();
        cfg.io.calibration = Some("cal.txt".into());
        assert!(matches!(
            Pipeline::from_config(&cfg, None),
            Err(Error::CalibrationMissing)
        ));
        cfg.io.rectify = false;
        assert!(Pipeline::from_config(&cfg, None).is_ok());
        let mut cfg = PipelineConfig::default();
        cfg.ranging.f_pixel_source = crate::ranging::FPixelSource::Calibration;
        assert!(matches!(
            Pipeline::from_config(&cfg, None),
            Err(Error::CalibrationMissing)
        ));
    }

    #[test]
    fn bad_frames_become_records() {
        let good = |idx| Frame {
            idx,
            timestamp_ms: 0.0,
            left: GrayImage::new(64, 48),
            right: GrayImage::new(64, 48),
        };
        let frames = vec![
            good(0),
            Frame {
                right: GrayImage::new(32, 48),
                ..good(1)
            },
            good(2),
            good(2),
            good(3),
        ];
        let p = Pipeline::from_config(&PipelineConfig::default(), None).unwrap();
        let out: Vec<_> = run_pipeline(p, VecSource::new(frames)).collect();
        let ok: Vec<bool> = out.iter().map(|r| r.is_ok()).collect();
        assert_eq!(ok, [true, false, true, false, true]);
        match &out[1] {
            Err(e) => {
                assert_eq!(e.frame_idx, 1);
                assert!(matches!(e.error, Error::DimensionMismatch { .. }));
                assert!(format_frame_error(e).starts_with("1\terror\t"));
            }
            Ok(_) => unreachable!(),
        }
    }

    #[test]
    fn rectified_run_matches_plain_for_ideal_rig() {
        let mut cfg = PipelineConfig::default();
        let maps = StereoMaps::from_rig(&rig(), (640, 480)).unwrap();
        let run = |p: Pipeline| -> Vec<FrameResult> {
            run_pipeline(p, SyntheticSource::new(disc_scene(200.0), Some(2), 20.0))
                .map(|r| r.unwrap())
                .collect()
        };
        let plain = run(Pipeline::from_config(&cfg, None).unwrap());
        cfg.io.calibration = Some("cal.txt".into());
        let rect = run(Pipeline::from_config(&cfg, Some(maps)).unwrap());
        for (a, b) in plain.iter().zip(&rect) {
            assert!(a.same_content(b));
        }
    }

    #[test]
    fn result_lines() {
        let p = Pipeline::from_config(&PipelineConfig::default(), None).unwrap();
        let r = run_pipeline(p, SyntheticSource::new(disc_scene(100.0), Some(1), 20.0))
            .next()
            .unwrap()
            .unwrap();
        let line = format_frame_result(&r);
        let fields: Vec<&str> = line.trim_end().split('\t').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], "0");
        assert_eq!(fields[1], "fiducial");
        assert!((fields[2].parse::<f64>().unwrap() - 100.0).abs() < 1.0);
        assert_eq!(fields[4], "Danger");
    }

    #[test]
    fn unbounded_source_is_paced() {
        let cfg = PipelineConfig {
            target_fps: 100.0,
            ..PipelineConfig::default()
        };
        let p = Pipeline::from_config(&cfg, None).unwrap();
        let src = SyntheticSource::new(SyntheticScene::new(rig(), (64, 64)), None, 100.0);
        let t = Instant::now();
        let n = run_pipeline(p, src).take(6).count();
        assert_eq!(n, 6);
        // Five full periods between six frames.
        assert!(t.elapsed() >= Duration::from_millis(49));
    }
}
