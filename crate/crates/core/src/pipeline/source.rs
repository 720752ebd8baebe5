use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::pgm::read_pgm;
use crate::synthsim::{render_stereo, GroundTruth, SyntheticScene};
use crate::{Error, Result};

/// One captured stereo pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub idx: u64,
    pub timestamp_ms: f64,
    pub left: GrayImage,
    pub right: GrayImage,
}

/// A frame that could not be produced or processed.
#[derive(Debug)]
pub struct FrameError {
    pub frame_idx: u64,
    pub error: Error,
}

/// Supplies stereo frames in index order.
pub trait FrameSource {
    /// `None` once the source is exhausted.
    fn next_frame(&mut self) -> Option<Result<Frame, FrameError>>;

    /// Live sources never run out; the pipeline paces itself only for those.
    fn is_unbounded(&self) -> bool {
        false
    }
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn next_frame(&mut self) -> Option<Result<Frame, FrameError>> {
        (**self).next_frame()
    }

    fn is_unbounded(&self) -> bool {
        (**self).is_unbounded()
    }
}

/// Frames stored as `left_NNNNNN.pgm` / `right_NNNNNN.pgm` pairs, served
/// in index order.
#[derive(Debug)]
pub struct DirectorySource {
    frames: std::vec::IntoIter<(u64, PathBuf, Option<PathBuf>)>,
    period_ms: f64,
}

fn frame_index(name: &str, prefix: &str) -> Option<u64> {
    let digits = name.strip_prefix(prefix)?.strip_suffix(".pgm")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl DirectorySource {
    /// Timestamps are synthesized from the frame index at `fps`.
    pub fn open(dir: &Path, fps: f64) -> Result<Self> {
        let mut left = BTreeMap::new();
        let mut right = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(i) = frame_index(name, "left_") {
                left.insert(i, entry.path());
            } else if let Some(i) = frame_index(name, "right_") {
                right.insert(i, entry.path());
            }
        }
        if let Some(i) = right.keys().find(|i| !left.contains_key(i)) {
            return Err(Error::InvalidInput(format!(
                "{}: right frame {i} has no left frame",
                dir.display()
            )));
        }
        let frames: Vec<_> = left.into_iter().map(|(i, l)| (i, l, right.remove(&i))).collect();
        Ok(Self {
            frames: frames.into_iter(),
            period_ms: 1000.0 / fps,
        })
    }

    pub fn frame_path(dir: &Path, camera: &str, idx: u64) -> PathBuf {
        dir.join(format!("{camera}_{idx:06}.pgm"))
    }
}

impl FrameSource for DirectorySource {
    fn next_frame(&mut self) -> Option<Result<Frame, FrameError>> {
        let (idx, left, right) = self.frames.next()?;
        let load = || -> Result<Frame> {
            let right = right.ok_or_else(|| Error::InvalidInput(format!("frame {idx}: missing right image")))?;
            Ok(Frame {
                idx,
                timestamp_ms: idx as f64 * self.period_ms,
                left: read_pgm(&left)?,
                right: read_pgm(&right)?,
            })
        };
        Some(load().map_err(|error| FrameError { frame_idx: idx, error }))
    }
}

/// Renders frames from synthetic scenes. A single scene is rendered once
/// and repeated.
#[derive(Debug)]
pub struct SyntheticSource {
    scenes: Vec<SyntheticScene>,
    cache: Option<(usize, Frame, GroundTruth)>,
    next: u64,
    frames: Option<u64>,
    period_ms: f64,
}

impl SyntheticSource {
    /// `frames = None` repeats forever.
    pub fn new(scene: SyntheticScene, frames: Option<u64>, fps: f64) -> Self {
        Self::cycle(vec![scene], frames, fps)
    }

    /// Frame `i` shows `scenes[i % len]`.
    pub fn cycle(scenes: Vec<SyntheticScene>, frames: Option<u64>, fps: f64) -> Self {
        assert!(!scenes.is_empty(), "synthetic source needs a scene");
        Self {
            scenes,
            cache: None,
            next: 0,
            frames,
            period_ms: 1000.0 / fps,
        }
    }

    /// Truth of the most recently produced frame.
    pub fn last_truth(&self) -> Option<&GroundTruth> {
        self.cache.as_ref().map(|(_, _, t)| t)
    }
}

impl FrameSource for SyntheticSource {
    fn next_frame(&mut self) -> Option<Result<Frame, FrameError>> {
        let idx = self.next;
        if self.frames.is_some_and(|n| idx >= n) {
            return None;
        }
        self.next += 1;
        let which = (idx % self.scenes.len() as u64) as usize;
        if self.cache.as_ref().is_none_or(|(w, _, _)| *w != which) {
            match render_stereo(&self.scenes[which]) {
                Ok(r) => {
                    let frame = Frame {
                        idx,
                        timestamp_ms: 0.0,
                        left: r.left,
                        right: r.right,
                    };
                    self.cache = Some((which, frame, r.truth));
                }
                Err(error) => return Some(Err(FrameError { frame_idx: idx, error })),
            }
        }
        let (_, frame, _) = self.cache.as_ref().expect("cache filled above");
        Some(Ok(Frame {
            idx,
            timestamp_ms: idx as f64 * self.period_ms,
            ..frame.clone()
        }))
    }

    fn is_unbounded(&self) -> bool {
        self.frames.is_none()
    }
}

/// Frames held in memory.
#[derive(Debug, Default)]
pub struct VecSource {
    frames: std::vec::IntoIter<Frame>,
}

impl VecSource {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self {
            frames: frames.into_iter(),
        }
    }
}

impl FrameSource for VecSource {
    fn next_frame(&mut self) -> Option<Result<Frame, FrameError>> {
        self.frames.next().map(Ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, StereoRig};
    use crate::pgm::write_pgm;

    #[test]
    fn directory_listing() {
        let dir = tempfile::tempdir().unwrap();
        for i in [2u64, 0, 1] {
            let img = GrayImage::from_pixel(8, 8, image::Luma([i as u8]));
            write_pgm(&DirectorySource::frame_path(dir.path(), "left", i), &img).unwrap();
            write_pgm(&DirectorySource::frame_path(dir.path(), "right", i), &img).unwrap();
        }
        std::fs::write(dir.path().join("left_notes.pgm"), b"x").unwrap();
        std::fs::write(dir.path().join("README"), b"x").unwrap();
        let mut src = DirectorySource::open(dir.path(), 20.0).unwrap();
        let mut seen = Vec::new();
        while let Some(f) = src.next_frame() {
            let f = f.unwrap();
            assert_eq!(f.left.get_pixel(0, 0)[0] as u64, f.idx);
            assert_eq!(f.timestamp_ms, f.idx as f64 * 50.0);
            seen.push(f.idx);
        }
        assert_eq!(seen, [0, 1, 2]);
    }

    #[test]
    fn missing_right_frame_is_a_record() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(8, 8);
        write_pgm(&DirectorySource::frame_path(dir.path(), "left", 0), &img).unwrap();
        let mut src = DirectorySource::open(dir.path(), 20.0).unwrap();
        let err = src.next_frame().unwrap().unwrap_err();
        assert_eq!(err.frame_idx, 0);
        assert!(src.next_frame().is_none());

        write_pgm(&DirectorySource::frame_path(dir.path(), "right", 5), &img).unwrap();
        assert!(DirectorySource::open(dir.path(), 20.0).is_err());
    }

    #[test]
    fn synthetic_counts() {
        let rig = StereoRig::ideal(CameraIntrinsics::new(500.0, 500.0, 32.0, 32.0), 9.0);
        let mut src = SyntheticSource::new(SyntheticScene::new(rig, (64, 64)), Some(3), 20.0);
        assert!(!src.is_unbounded());
        let idx: Vec<u64> = std::iter::from_fn(|| src.next_frame())
            .map(|f| f.unwrap().idx)
            .collect();
        assert_eq!(idx, [0, 1, 2]);
        assert!(SyntheticSource::new(SyntheticScene::new(rig, (64, 64)), None, 20.0).is_unbounded());
    }
}
