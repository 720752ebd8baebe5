#![allow(dead_code)]

use nalgebra::{Rotation3, Vector3};
use overtake_core::calibration::BoardSpec;
use overtake_core::geometry::{CameraIntrinsics, Distortion, Pose, StereoRig};

pub const FRAME: (usize, usize) = (640, 480);

/// 320 / tan(30 deg): a 60 degree horizontal field of view at 640 px.
pub fn fov60_focal() -> f64 {
    320.0 / 30f64.to_radians().tan()
}

pub fn ideal_rig() -> StereoRig {
    let f = fov60_focal();
    StereoRig::ideal(CameraIntrinsics::new(f, f, 320.0, 240.0), 9.0)
}

pub fn board() -> BoardSpec {
    BoardSpec::new(6, 9, 2.5).unwrap()
}

/// Slightly mismatched cameras with mild lens distortion and a small
/// relative rotation.
pub fn realistic_rig() -> StereoRig {
    let left = CameraIntrinsics::new(800.0, 805.0, 318.0, 242.0)
        .with_distortion(Distortion::from_array([-0.12, 0.05, 0.001, -0.0005, 0.0]));
    let right = CameraIntrinsics::new(795.0, 798.0, 323.0, 238.0)
        .with_distortion(Distortion::from_array([-0.10, 0.04, -0.0008, 0.0006, 0.0]));
    StereoRig {
        left,
        right,
        extrinsics: Pose::from_axis_angle(Vector3::new(0.01, -0.02, 0.005), Vector3::new(-9.0, 0.1, 0.2)),
    }
}

/// Two cameras 9 cm apart, each turned `deg` degrees toward the other.
/// Also returns the pose of the left camera in the rig frame (origin
/// midway between the cameras), for placing scene points.
pub fn toed_in_rig(deg: f64) -> (StereoRig, Pose) {
    let f = 800.0;
    let intr = CameraIntrinsics::new(f, f, 320.0, 240.0);
    let a = deg.to_radians();
    // Left camera sits at x = -4.5 and looks toward +x; the right mirrors it.
    let rot_left = Rotation3::from_axis_angle(&Vector3::y_axis(), -a).into_inner();
    let rot_right = Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner();
    let left = Pose::new(rot_left, -(rot_left * Vector3::new(-4.5, 0.0, 0.0)));
    let right = Pose::new(rot_right, -(rot_right * Vector3::new(4.5, 0.0, 0.0)));
    let rig = StereoRig {
        left: intr,
        right: intr,
        extrinsics: right.compose(&left.inverse()),
    };
    (rig, left)
}
