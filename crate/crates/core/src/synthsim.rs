//! Synthetic stereo renderer with known ground truth.
//!
//! Targets are flat shapes facing the left camera. The world frame is the
//! left camera frame, so a target's depth is simply the Z of its center.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calibration::{BoardSpec, Camera, CornerObservation};
use crate::geometry::{project, CameraIntrinsics, Distortion, ImagePoint, Pose, StereoRig, WorldPoint};
use crate::{Error, Result};

/// Vertices used for a disc outline.
pub const DISC_VERTICES: usize = 64;
const RECT_EDGE_SEGMENTS: usize = 16;

/// Smallest renderable frame side.
pub const MIN_IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetShape {
    /// cm.
    Disc { radius: f64 },
    /// cm.
    Rect { width: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTarget {
    pub shape: TargetShape,
    pub center: WorldPoint,
    pub intensity: u8,
}

impl SyntheticTarget {
    pub fn disc(center: WorldPoint, radius: f64, intensity: u8) -> Self {
        Self {
            shape: TargetShape::Disc { radius },
            center,
            intensity,
        }
    }

    pub fn rect(center: WorldPoint, width: f64, height: f64, intensity: u8) -> Self {
        Self {
            shape: TargetShape::Rect { width, height },
            center,
            intensity,
        }
    }

    fn outline(&self) -> Vec<WorldPoint> {
        let c = self.center;
        match self.shape {
            TargetShape::Disc { radius } => (0..DISC_VERTICES)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / DISC_VERTICES as f64;
                    WorldPoint::new(c.x + radius * a.cos(), c.y + radius * a.sin(), c.z)
                })
                .collect(),
            TargetShape::Rect { width, height } => {
                let (hw, hh) = (width / 2.0, height / 2.0);
                let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
                let n = RECT_EDGE_SEGMENTS;
                (0..4)
                    .flat_map(|e| {
                        let (a, b) = (corners[e], corners[(e + 1) % 4]);
                        (0..n).map(move |k| {
                            let s = k as f64 / n as f64;
                            (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1))
                        })
                    })
                    .map(|(dx, dy)| WorldPoint::new(c.x + dx, c.y + dy, c.z))
                    .collect()
            }
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let ok = match self.shape {
            TargetShape::Disc { radius } => radius > 0.0 && radius.is_finite(),
            TargetShape::Rect { width, height } => {
                width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()
            }
        };
        if !ok {
            return Err(Error::InvalidInput(format!("target {index}: extents must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub targets: Vec<SyntheticTarget>,
    pub rig: StereoRig,
    /// (width, height).
    pub image_size: (usize, usize),
    pub background: u8,
}

impl SyntheticScene {
    pub fn new(rig: StereoRig, image_size: (usize, usize)) -> Self {
        Self {
            targets: Vec::new(),
            rig,
            image_size,
            background: 0,
        }
    }

    pub fn with_target(mut self, t: SyntheticTarget) -> Self {
        self.targets.push(t);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTruth {
    /// Left camera Z of the target center, cm.
    pub depth: f64,
    pub left: ImagePoint,
    pub right: ImagePoint,
}

impl TargetTruth {
    pub fn disparity(&self) -> f64 {
        self.left.x - self.right.x
    }
}

/// One entry per scene target, in scene order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub targets: Vec<TargetTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub truth: GroundTruth,
}

/// Renders both views with one sample per pixel center; nearer targets
/// paint over farther ones.
pub fn render_stereo(scene: &SyntheticScene) -> Result<RenderedPair> {
    let (w, h) = scene.image_size;
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(Error::InvalidInput(format!(
            "image size {w}x{h} below {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
        )));
    }
    let left_pose = Pose::identity();
    let right_pose = scene.rig.extrinsics;

    let mut truth = GroundTruth::default();
    // (depth in that camera, outline in pixels, intensity), per camera.
    let mut polys: [Vec<(f64, Vec<ImagePoint>, u8)>; 2] = [Vec::new(), Vec::new()];
    for (index, t) in scene.targets.iter().enumerate() {
        t.validate(index)?;
        let outline = t.outline();
        let mut centers = [ImagePoint::new(0.0, 0.0); 2];
        for (cam, (intr, pose)) in [(&scene.rig.left, &left_pose), (&scene.rig.right, &right_pose)]
            .into_iter()
            .enumerate()
        {
            let behind = |_| Error::TargetBehindCamera { index };
            let z = pose.transform(&t.center.to_vector()).z;
            centers[cam] = project(intr, pose, &t.center).map_err(behind)?;
            let pixels = outline
                .iter()
                .map(|p| project(intr, pose, p))
                .collect::<Result<Vec<_>>>()
                .map_err(behind)?;
            polys[cam].push((z, pixels, t.intensity));
        }
        truth.targets.push(TargetTruth {
            depth: t.center.z,
            left: centers[0],
            right: centers[1],
        });
    }

    let [left_polys, right_polys] = polys;
    let (left, right) = rayon::join(
        || paint(w, h, scene.background, left_polys),
        || paint(w, h, scene.background, right_polys),
    );
    Ok(RenderedPair { left, right, truth })
}

fn paint(w: usize, h: usize, background: u8, mut polys: Vec<(f64, Vec<ImagePoint>, u8)>) -> GrayImage {
    let mut img = GrayImage::from_pixel(w as u32, h as u32, Luma([background]));
    // Stable sort: equal depths keep scene order, later targets on top.
    polys.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, poly, value) in &polys {
        fill_polygon(&mut img, poly, *value);
    }
    img
}

/// Even-odd scanline fill. A pixel is inside when its center is; spans are
/// half-open on the right so shared edges are not painted twice.
fn fill_polygon(img: &mut GrayImage, poly: &[ImagePoint], value: u8) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let y_lo = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let y_hi = poly
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min((h - 1) as f64) as i64;
    let mut xs = Vec::new();
    for row in y_lo..=y_hi {
        let y = row as f64;
        xs.clear();
        for (i, a) in poly.iter().enumerate() {
            let b = &poly[(i + 1) % poly.len()];
            if (a.y <= y && y < b.y) || (b.y <= y && y < a.y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let c0 = span[0].ceil().max(0.0) as i64;
            let c1 = (span[1].ceil() as i64).min(w);
            for col in c0..c1 {
                img.put_pixel(col as u32, row as u32, Luma([value]));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scene files

fn format_err(source: &Path, line: usize, node: &str, message: impl Into<String>) -> Error {
    Error::Format {
        path: source.to_path_buf(),
        node: node.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_numbers(source: &Path, line: usize, key: &str, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(source, line, key, format!("bad number {f:?}")))
        })
        .collect()
}

fn parse_intensity(source: &Path, line: usize, key: &str, v: f64) -> Result<u8> {
    if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
        return Err(format_err(source, line, key, format!("intensity {v} outside 0..=255")));
    }
    Ok(v as u8)
}

/// Reads a scene description file.
pub fn read_scene(path: &Path) -> Result<SyntheticScene> {
    parse_scene(&std::fs::read_to_string(path)?, path)
}

/// Parses a scene description. `source` only labels errors.
///
/// ```text
/// image 640 480
/// background 0
/// left 554.26 554.26 320 240        # optional k1 k2 p1 p2 k3
/// right 554.26 554.26 320 240       # defaults to the left camera
/// baseline 9                        # or: stereo rx ry rz tx ty tz
/// disc 0 0 150 20 255               # cx cy cz radius intensity
/// rect 30 0 200 40 20 200           # cx cy cz width height intensity
/// ```
pub fn parse_scene(text: &str, source: &Path) -> Result<SyntheticScene> {
    let mut size = None;
    let mut background = 0u8;
    let mut left: Option<CameraIntrinsics> = None;
    let mut right: Option<CameraIntrinsics> = None;
    let mut extrinsics: Option<Pose> = None;
    let mut targets = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let key = fields[0];
        let args = &fields[1..];
        let arity = |ok: &[usize]| -> Result<()> {
            if ok.contains(&args.len()) {
                Ok(())
            } else {
                Err(format_err(
                    source,
                    line,
                    key,
                    format!("expected {ok:?} values, got {}", args.len()),
                ))
            }
        };
        match key {
            "image" => {
                arity(&[2])?;
                let v: Vec<usize> = args
                    .iter()
                    .map(|a| {
                        a.parse()
                            .map_err(|_| format_err(source, line, key, format!("bad size {a:?}")))
                    })
                    .collect::<Result<_>>()?;
                size = Some((v[0], v[1]));
            }
            "background" => {
                arity(&[1])?;
                let v = parse_numbers(source, line, key, args)?;
                background = parse_intensity(source, line, key, v[0])?;
            }
            "left" | "right" => {
                arity(&[4, 9])?;
                let v = parse_numbers(source, line, key, args)?;
                let mut intr = CameraIntrinsics::new(v[0], v[1], v[2], v[3]);
                if v.len() == 9 {
                    intr = intr.with_distortion(Distortion::from_array([v[4], v[5], v[6], v[7], v[8]]));
                }
                if key == "left" {
                    left = Some(intr);
                } else {
                    right = Some(intr);
                }
            }
            "baseline" => {
                arity(&[1])?;
                let b = parse_numbers(source, line, key, args)?[0];
                if !(b > 0.0) {
                    return Err(format_err(source, line, key, "baseline must be positive"));
                }
                extrinsics = Some(Pose::new(nalgebra::Matrix3::identity(), Vector3::new(-b, 0.0, 0.0)));
            }
            "stereo" => {
                arity(&[6])?;
                let v = parse_numbers(source, line, key, args)?;
                extrinsics = Some(Pose::from_axis_angle(
                    Vector3::new(v[0], v[1], v[2]),
                    Vector3::new(v[3], v[4], v[5]),
                ));
            }
            "disc" => {
                arity(&[5])?;
                let v = parse_numbers(source, line, key, args)?;
                let intensity = parse_intensity(source, line, key, v[4])?;
                targets.push(SyntheticTarget::disc(
                    WorldPoint::new(v[0], v[1], v[2]),
                    v[3],
                    intensity,
                ));
            }
            "rect" => {
                arity(&[6])?;
                let v = parse_numbers(source, line, key, args)?;
                let intensity = parse_intensity(source, line, key, v[5])?;
                targets.push(SyntheticTarget::rect(
                    WorldPoint::new(v[0], v[1], v[2]),
                    v[3],
                    v[4],
                    intensity,
                ));
            }
            _ => return Err(format_err(source, line, key, "unknown directive")),
        }
    }

    let end = text.lines().count();
    let image_size = size.ok_or_else(|| format_err(source, end, "image", "missing"))?;
    let left = left.ok_or_else(|| format_err(source, end, "left", "missing"))?;
    let extrinsics = extrinsics.ok_or_else(|| format_err(source, end, "baseline", "missing baseline or stereo"))?;
    Ok(SyntheticScene {
        targets,
        rig: StereoRig {
            left,
            right: right.unwrap_or(left),
            extrinsics,
        },
        image_size,
        background,
    })
}

/// Serializes a scene in the format read by [`parse_scene`].
pub fn write_scene(scene: &SyntheticScene) -> String {
    let mut s = String::new();
    let cam = |s: &mut String, key: &str, c: &CameraIntrinsics| {
        write!(s, "{key} {} {} {} {}", c.fx, c.fy, c.cx, c.cy).unwrap();
        if !c.dist.is_zero() {
            for v in c.dist.as_array() {
                write!(s, " {v}").unwrap();
            }
        }
        s.push('\n');
    };
    writeln!(s, "image {} {}", scene.image_size.0, scene.image_size.1).unwrap();
    writeln!(s, "background {}", scene.background).unwrap();
    cam(&mut s, "left", &scene.rig.left);
    cam(&mut s, "right", &scene.rig.right);
    let r = scene.rig.extrinsics.axis_angle();
    let t = scene.rig.extrinsics.translation;
    writeln!(s, "stereo {} {} {} {} {} {}", r.x, r.y, r.z, t.x, t.y, t.z).unwrap();
    for tg in &scene.targets {
        let c = tg.center;
        match tg.shape {
            TargetShape::Disc { radius } => writeln!(s, "disc {} {} {} {radius} {}", c.x, c.y, c.z, tg.intensity),
            TargetShape::Rect { width, height } => {
                writeln!(s, "rect {} {} {} {width} {height} {}", c.x, c.y, c.z, tg.intensity)
            }
        }
        .unwrap();
    }
    s
}

/// Truth file: one line per target,
/// `index depth_cm left_x left_y right_x right_y disparity_px`.
pub fn format_truth(truth: &GroundTruth) -> String {
    let mut s = String::from("# index depth_cm left_x left_y right_x right_y disparity_px\n");
    for (i, t) in truth.targets.iter().enumerate() {
        writeln!(
            s,
            "{i} {} {} {} {} {} {}",
            t.depth,
            t.left.x,
            t.left.y,
            t.right.x,
            t.right.y,
            t.disparity()
        )
        .unwrap();
    }
    s
}

// ---------------------------------------------------------------------------
// Calibration boards

/// Board pose that places the board center at `center` (left camera frame)
/// after tilting the board by the given angles (degrees) about its own
/// x, y and z axes.
pub fn board_pose(board: &BoardSpec, center: Vector3<f64>, tilt_x: f64, tilt_y: f64, roll: f64) -> Pose {
    let rot = Rotation3::from_euler_angles(tilt_x.to_radians(), tilt_y.to_radians(), roll.to_radians()).into_inner();
    let mid = Vector3::new(
        (board.inner_cols - 1) as f64 * board.square_size / 2.0,
        (board.inner_rows - 1) as f64 * board.square_size / 2.0,
        0.0,
    );
    Pose::new(rot, center - rot * mid)
}

/// A spread of `n` board poses around the point `distance` cm in front of
/// the midpoint between the cameras, tilted up to about 30 degrees.
pub fn board_view_poses(board: &BoardSpec, rig: &StereoRig, n: usize, distance: f64) -> Vec<Pose> {
    let mid_x = rig.extrinsics.inverse().translation.x / 2.0;
    (0..n)
        .map(|i| {
            let k = i as f64;
            let tilt_x = 25.0 * (k * 2.4).sin();
            let tilt_y = 30.0 * (k * 1.3 + 0.5).cos();
            let roll = 10.0 * (k * 0.7).sin();
            let z = distance * (1.0 + 0.15 * (k * 0.9).cos());
            let center = Vector3::new(
                mid_x + 0.04 * distance * (k * 1.1).sin(),
                0.03 * distance * (k * 1.7).cos(),
                z,
            );
            board_pose(board, center, tilt_x, tilt_y, roll)
        })
        .collect()
}

/// Projects the board through both cameras for each pose (board frame to
/// left camera), optionally adding seeded Gaussian pixel noise.
///
/// Views where any corner leaves either frame fail with `OutOfBounds`.
pub fn generate_board_observations(
    rig: &StereoRig,
    board: &BoardSpec,
    poses: &[Pose],
    frame: (usize, usize),
    noise: Option<(f64, u64)>,
) -> Result<Vec<CornerObservation>> {
    board.validate()?;
    let objects = board.object_points();
    let mut rng = match noise {
        Some((sigma, seed)) => Some((
            Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(format!("noise sigma: {e}")))?,
            ChaCha8Rng::seed_from_u64(seed),
        )),
        None => None,
    };
    let mut out = Vec::with_capacity(2 * poses.len());
    for (view_id, pose) in poses.iter().enumerate() {
        for (camera, intr, cam_pose) in [
            (Camera::Left, &rig.left, *pose),
            (Camera::Right, &rig.right, rig.right_pose(pose)),
        ] {
            let mut corners = Vec::with_capacity(objects.len());
            for p in &objects {
                let mut q = project(intr, &cam_pose, p)?;
                if let Some((normal, rng)) = rng.as_mut() {
                    q.x += normal.sample(rng);
                    q.y += normal.sample(rng);
                }
                if !((0.0..frame.0 as f64).contains(&q.x) && (0.0..frame.1 as f64).contains(&q.y)) {
                    return Err(Error::OutOfBounds { x: q.x, y: q.y });
                }
                corners.push(q);
            }
            out.push(CornerObservation {
                view_id,
                camera,
                corners,
            });
        }
    }
    Ok(out)
}

/// Scene source path used in error messages for in-memory scenes.
pub fn inline_source() -> PathBuf {
    PathBuf::from("<scene>")
}
