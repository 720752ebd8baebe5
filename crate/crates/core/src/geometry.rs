//! Pinhole camera model with 5-coefficient Brown-Conrady distortion.
//!
//! Conventions: world and translation units are centimeters, pixel
//! coordinates put the center of pixel `(c, r)` at `(c, r)`, and a pose maps
//! a point into the camera frame as `X_cam = R * X + t`. Skew is always zero.

use nalgebra::{Matrix2x3, Matrix3, Rotation3, SMatrix, Vector3};

use crate::{Error, Result};

const UNDISTORT_MAX_ITER: usize = 20;
const UNDISTORT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A point in scene coordinates, centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Brown-Conrady coefficients in OpenCV order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub const NONE: Distortion = Distortion {
        k1: 0.0,
        k2: 0.0,
        p1: 0.0,
        p2: 0.0,
        k3: 0.0,
    };

    pub fn radial(k1: f64, k2: f64, k3: f64) -> Self {
        Self {
            k1,
            k2,
            k3,
            ..Self::NONE
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            k1: a[0],
            k2: a[1],
            p1: a[2],
            p2: a[3],
            k3: a[4],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&c| c == 0.0)
    }

    /// Applies the distortion to normalized coordinates.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Jacobian of [`Distortion::apply`] with respect to the normalized point.
    fn point_jacobian(&self, x: f64, y: f64) -> nalgebra::Matrix2<f64> {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let (p1, p2) = (self.p1, self.p2);
        nalgebra::Matrix2::new(
            radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x,
            2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub dist: Distortion,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            dist: Distortion::NONE,
        }
    }

    pub fn with_distortion(mut self, dist: Distortion) -> Self {
        self.dist = dist;
        self
    }

    /// Checks focal lengths, finiteness, and that the principal point lies
    /// within twice the frame extent.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.dist.as_array().iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("non-finite intrinsics".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let inside = |c: f64, extent: usize| (0.0..=2.0 * extent as f64).contains(&c);
        if !inside(self.cx, width) || !inside(self.cy, height) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside 2x frame extent",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn as_array(&self) -> [f64; 9] {
        let d = self.dist.as_array();
        [self.fx, self.fy, self.cx, self.cy, d[0], d[1], d[2], d[3], d[4]]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        Self {
            fx: a[0],
            fy: a[1],
            cx: a[2],
            cy: a[3],
            dist: Distortion::from_array([a[4], a[5], a[6], a[7], a[8]]),
        }
    }

    /// Maps a camera-frame point to pixels.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<ImagePoint> {
        if !(p.z > 0.0) {
            return Err(Error::PointBehindCamera { z: p.z });
        }
        Ok(self.distort_normalized(p.x / p.z, p.y / p.z))
    }

    /// Applies distortion and the pixel mapping to a normalized point.
    pub fn distort_normalized(&self, x: f64, y: f64) -> ImagePoint {
        let (xd, yd) = self.dist.apply(x, y);
        ImagePoint::new(self.fx * xd + self.cx, self.fy * yd + self.cy)
    }

    /// Normalized, distortion-free coordinates of an ideal pixel.
    pub fn normalize(&self, p: &ImagePoint) -> (f64, f64) {
        ((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    /// Projection together with its Jacobians with respect to the nine
    /// intrinsic parameters (in [`CameraIntrinsics::as_array`] order) and
    /// the camera-frame point.
    pub fn project_with_jacobians(&self, p: &Vector3<f64>) -> Result<(ImagePoint, SMatrix<f64, 2, 9>, Matrix2x3<f64>)> {
        if !(p.z > 0.0) {
            return Err(Error::PointBehindCamera { z: p.z });
        }
        let inv_z = 1.0 / p.z;
        let (x, y) = (p.x * inv_z, p.y * inv_z);
        let (xd, yd) = self.dist.apply(x, y);
        let r2 = x * x + y * y;
        let (r4, r6) = (r2 * r2, r2 * r2 * r2);

        let (fx, fy) = (self.fx, self.fy);
        #[rustfmt::skip]
        let d_intr = SMatrix::<f64, 2, 9>::from_row_slice(&[
            xd, 0.0, 1.0, 0.0, fx * x * r2, fx * x * r4, fx * 2.0 * x * y, fx * (r2 + 2.0 * x * x), fx * x * r6,
            0.0, yd, 0.0, 1.0, fy * y * r2, fy * y * r4, fy * (r2 + 2.0 * y * y), fy * 2.0 * x * y, fy * y * r6,
        ]);

        let d_norm = Matrix2x3::new(inv_z, 0.0, -x * inv_z, 0.0, inv_z, -y * inv_z);
        let scale = nalgebra::Matrix2::new(fx, 0.0, 0.0, fy);
        let d_point = scale * self.dist.point_jacobian(x, y) * d_norm;

        Ok((ImagePoint::new(fx * xd + self.cx, fy * yd + self.cy), d_intr, d_point))
    }
}

/// Rigid transform from a reference frame into a camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from an axis-angle vector (radians) and a translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Left-multiplies the rotation by `exp(delta)` and adds `dt`.
    pub fn perturbed(&self, delta_rot: &Vector3<f64>, delta_t: &Vector3<f64>) -> Pose {
        let rotation = orthonormalize(&(Rotation3::new(*delta_rot).into_inner() * self.rotation));
        Pose {
            rotation,
            translation: self.translation + delta_t,
        }
    }

    /// `‖RᵀR − I‖∞`
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn is_valid_rotation(&self) -> bool {
        self.orthonormality_error() <= 1e-9 && self.rotation.determinant() > 0.0
    }
}

/// Closest rotation matrix (Frobenius norm) to `m`.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Projects a scene point through a posed camera: pose, perspective
/// division, distortion, pixel mapping.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, p: &WorldPoint) -> Result<ImagePoint> {
    intr.project_camera_point(&pose.transform(&p.to_vector()))
}

/// Removes lens distortion from a pixel by fixed-point iteration on
/// normalized coordinates.
pub fn undistort_point(intr: &CameraIntrinsics, p: &ImagePoint) -> Result<ImagePoint> {
    if !p.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite pixel {p:?}")));
    }
    if intr.dist.is_zero() {
        return Ok(*p);
    }
    let (xd, yd) = intr.normalize(p);
    let d = &intr.dist;
    let (mut x, mut y) = (xd, yd);
    for _ in 0..UNDISTORT_MAX_ITER {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
        let dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
        let dy = d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
        let nx = (xd - dx) / radial;
        let ny = (yd - dy) / radial;
        if !(nx.is_finite() && ny.is_finite()) {
            break;
        }
        let step = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        if step < UNDISTORT_TOL {
            return Ok(ImagePoint::new(intr.fx * x + intr.cx, intr.fy * y + intr.cy));
        }
    }
    Err(Error::NonConvergent {
        what: "undistort_point",
        iterations: UNDISTORT_MAX_ITER,
    })
}

/// Two cameras and the pose of the right camera relative to the left
/// (`X_right = R * X_left + t`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    pub extrinsics: Pose,
}

impl StereoRig {
    /// Distortion-free parallel rig with the right camera `baseline` cm to the right.
    pub fn ideal(intr: CameraIntrinsics, baseline: f64) -> Self {
        Self {
            left: intr,
            right: intr,
            extrinsics: Pose::new(Matrix3::identity(), Vector3::new(-baseline, 0.0, 0.0)),
        }
    }

    pub fn baseline(&self) -> f64 {
        self.extrinsics.translation.norm()
    }

    /// Pose of the right camera given the pose of the left one.
    pub fn right_pose(&self, left: &Pose) -> Pose {
        self.extrinsics.compose(left)
    }
}
