//! Stereo calibration from chessboard corner correspondences.
//!
//! The flow is: per-view homographies, closed-form intrinsics from their
//! orthogonality constraints, per-view poses from homography decomposition,
//! an averaged stereo extrinsic, and finally a joint Levenberg-Marquardt
//! refinement of everything against the reprojection error.

mod corners_file;
mod extrinsics;
mod homography;
mod refine;
mod subpixel;
mod zhang;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Vector2};

pub use corners_file::{parse_corner_file, read_corner_file, write_corner_file};
pub use extrinsics::solve_stereo_extrinsics;
pub use homography::{estimate_homography, pose_from_homography};
pub use refine::{refine_calibration, refine_calibration_detailed, reprojection_rms, LmSummary};
pub use subpixel::{refine_corners_subpixel, SubpixelCriteria};
pub use zhang::init_intrinsics;

use crate::geometry::{CameraIntrinsics, ImagePoint, Pose, StereoRig, WorldPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Camera {
    Left,
    Right,
}

impl Camera {
    pub fn as_str(self) -> &'static str {
        match self {
            Camera::Left => "L",
            Camera::Right => "R",
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Camera {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" | "left" | "Left" | "0" => Ok(Camera::Left),
            "R" | "r" | "right" | "Right" | "1" => Ok(Camera::Right),
            other => Err(Error::InvalidInput(format!("unknown camera `{other}`"))),
        }
    }
}

/// Inner-corner grid of a planar chessboard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardSpec {
    pub inner_rows: usize,
    pub inner_cols: usize,
    /// Square edge, cm.
    pub square_size: f64,
}

impl BoardSpec {
    pub fn new(inner_rows: usize, inner_cols: usize, square_size: f64) -> Result<Self> {
        let board = Self {
            inner_rows,
            inner_cols,
            square_size,
        };
        board.validate()?;
        Ok(board)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_rows < 2 || self.inner_cols < 2 {
            return Err(Error::InvalidInput(format!(
                "board needs at least 2x2 inner corners, got {}x{}",
                self.inner_rows, self.inner_cols
            )));
        }
        if !(self.square_size > 0.0 && self.square_size.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "square size must be positive, got {}",
                self.square_size
            )));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.inner_rows * self.inner_cols
    }

    /// Board-plane coordinates in row-major grid order.
    pub fn plane_points(&self) -> Vec<Vector2<f64>> {
        (0..self.inner_rows)
            .flat_map(|r| {
                (0..self.inner_cols)
                    .map(move |c| Vector2::new(c as f64 * self.square_size, r as f64 * self.square_size))
            })
            .collect()
    }

    /// Corner positions on the board plane (Z = 0), row-major.
    pub fn object_points(&self) -> Vec<WorldPoint> {
        self.plane_points()
            .into_iter()
            .map(|p| WorldPoint::new(p.x, p.y, 0.0))
            .collect()
    }
}

/// All corners of one board view as seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerObservation {
    pub view_id: usize,
    pub camera: Camera,
    /// Row-major over the board grid.
    pub corners: Vec<ImagePoint>,
}

impl CornerObservation {
    pub fn validate(&self, board: &BoardSpec, frame: (usize, usize)) -> Result<()> {
        if self.corners.len() != board.corner_count() {
            return Err(Error::InvalidInput(format!(
                "view {} camera {}: {} corners, board has {}",
                self.view_id,
                self.camera,
                self.corners.len(),
                board.corner_count()
            )));
        }
        let (w, h) = (frame.0 as f64, frame.1 as f64);
        if let Some(p) = self
            .corners
            .iter()
            .find(|p| !(p.is_finite() && (0.0..w).contains(&p.x) && (0.0..h).contains(&p.y)))
        {
            return Err(Error::InvalidInput(format!(
                "view {} camera {}: corner ({}, {}) outside the {}x{} frame",
                self.view_id, self.camera, p.x, p.y, frame.0, frame.1
            )));
        }
        Ok(())
    }
}

/// Board pose in both cameras for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPoses {
    pub view_id: usize,
    pub left: Pose,
    pub right: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    pub view_poses: Vec<ViewPoses>,
    /// Right camera relative to left.
    pub stereo: Pose,
    /// Pixels.
    pub rms_reprojection: f64,
}

impl CalibrationResult {
    pub fn rig(&self) -> StereoRig {
        StereoRig {
            left: self.left,
            right: self.right,
            extrinsics: self.stereo,
        }
    }

    pub fn baseline(&self) -> f64 {
        self.stereo.translation.norm()
    }
}

/// Left/right observations of one view, after pairing.
pub(crate) struct PairedView<'a> {
    pub view_id: usize,
    pub left: &'a [ImagePoint],
    pub right: &'a [ImagePoint],
}

/// Pairs left and right observations per view, sorted by view id.
pub(crate) fn pair_views<'a>(board: &BoardSpec, obs: &'a [CornerObservation]) -> Result<Vec<PairedView<'a>>> {
    let mut by_view: BTreeMap<usize, [Option<&'a CornerObservation>; 2]> = BTreeMap::new();
    for o in obs {
        if o.corners.len() != board.corner_count() {
            return Err(Error::InvalidInput(format!(
                "view {} camera {}: {} corners, board has {}",
                o.view_id,
                o.camera,
                o.corners.len(),
                board.corner_count()
            )));
        }
        let slot = &mut by_view.entry(o.view_id).or_default()[o.camera as usize];
        if slot.is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate observation for view {} camera {}",
                o.view_id, o.camera
            )));
        }
        *slot = Some(o);
    }
    by_view
        .into_iter()
        .map(|(view_id, [l, r])| match (l, r) {
            (Some(l), Some(r)) => Ok(PairedView {
                view_id,
                left: &l.corners,
                right: &r.corners,
            }),
            _ => Err(Error::InvalidInput(format!(
                "view {view_id} is not observed by both cameras"
            ))),
        })
        .collect()
}

fn to_vec2(points: &[ImagePoint]) -> Vec<Vector2<f64>> {
    points.iter().map(|p| Vector2::new(p.x, p.y)).collect()
}

/// Full stereo calibration: closed-form initialisation followed by joint
/// nonlinear refinement.
pub fn calibrate_stereo(
    board: &BoardSpec,
    obs: &[CornerObservation],
    frame: (usize, usize),
) -> Result<(CalibrationResult, LmSummary)> {
    let initial = initial_calibration(board, obs, frame)?;
    refine_calibration_detailed(&initial, board, obs)
}

/// Closed-form starting point for [`refine_calibration`].
pub fn initial_calibration(
    board: &BoardSpec,
    obs: &[CornerObservation],
    frame: (usize, usize),
) -> Result<CalibrationResult> {
    board.validate()?;
    for o in obs {
        o.validate(board, frame)?;
    }
    let views = pair_views(board, obs)?;
    if views.len() < 3 {
        return Err(Error::InsufficientViews {
            needed: 3,
            got: views.len(),
        });
    }
    let plane = board.plane_points();

    let mut homographies: [Vec<Matrix3<f64>>; 2] = [Vec::new(), Vec::new()];
    for v in &views {
        homographies[0].push(estimate_homography(&plane, &to_vec2(v.left))?);
        homographies[1].push(estimate_homography(&plane, &to_vec2(v.right))?);
    }
    let left = init_intrinsics(&homographies[0], frame)?;
    let right = init_intrinsics(&homographies[1], frame)?;

    let mut view_poses = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        view_poses.push(ViewPoses {
            view_id: v.view_id,
            left: pose_from_homography(&left, &homographies[0][i])?,
            right: pose_from_homography(&right, &homographies[1][i])?,
        });
    }
    let lefts: Vec<Pose> = view_poses.iter().map(|v| v.left).collect();
    let rights: Vec<Pose> = view_poses.iter().map(|v| v.right).collect();
    let stereo = solve_stereo_extrinsics(&lefts, &rights)?;

    // Right poses follow the rig from here on.
    for vp in &mut view_poses {
        vp.right = stereo.compose(&vp.left);
    }
    let mut result = CalibrationResult {
        left,
        right,
        view_poses,
        stereo,
        rms_reprojection: 0.0,
    };
    result.rms_reprojection = reprojection_rms(&result, board, obs)?;
    Ok(result)
}
