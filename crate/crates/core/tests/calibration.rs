mod common;

use common::{board, realistic_rig, toed_in_rig, FRAME};
use overtake_core::calibration::{calibrate_stereo, initial_calibration, reprojection_rms};
use overtake_core::synthsim::{board_view_poses, generate_board_observations};

#[test]
fn noise_free_recovery() {
    let rig = realistic_rig();
    let b = board();
    let poses = board_view_poses(&b, &rig, 12, 60.0);
    let obs = generate_board_observations(&rig, &b, &poses, FRAME, None).unwrap();
    let (cal, summary) = calibrate_stereo(&b, &obs, FRAME).unwrap();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    assert!(rel(cal.left.fx, rig.left.fx) < 1e-3, "{}", cal.left.fx);
    assert!(rel(cal.left.fy, rig.left.fy) < 1e-3);
    assert!(rel(cal.right.fx, rig.right.fx) < 1e-3);
    assert!(rel(cal.baseline(), rig.baseline()) < 1e-3);
    assert!(cal.rms_reprojection < 1e-6, "rms {}", cal.rms_reprojection);
    let dk = (cal.left.dist.as_array()[0] - rig.left.dist.as_array()[0]).abs();
    assert!(dk < 1e-4, "k1 off by {dk}");
    // Accepted steps never raise the cost.
    assert!(summary.cost_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn refinement_improves_on_closed_form() {
    let rig = realistic_rig();
    let b = board();
    let poses = board_view_poses(&b, &rig, 12, 60.0);
    let obs = generate_board_observations(&rig, &b, &poses, FRAME, Some((0.2, 11))).unwrap();
    let init = initial_calibration(&b, &obs, FRAME).unwrap();
    let (cal, _) = calibrate_stereo(&b, &obs, FRAME).unwrap();
    assert!(cal.rms_reprojection <= init.rms_reprojection);
    assert!((reprojection_rms(&cal, &b, &obs).unwrap() - cal.rms_reprojection).abs() < 1e-9);
    assert!(cal.rms_reprojection <= 0.3, "rms {}", cal.rms_reprojection);
    assert!(((cal.left.fx - rig.left.fx) / rig.left.fx).abs() < 0.01);
}

#[test]
fn toed_in_rig_calibrates() {
    let (rig, _) = toed_in_rig(5.0);
    let b = board();
    let poses = board_view_poses(&b, &rig, 12, 70.0);
    let obs = generate_board_observations(&rig, &b, &poses, FRAME, None).unwrap();
    let (cal, _) = calibrate_stereo(&b, &obs, FRAME).unwrap();
    assert!((cal.baseline() - 9.0).abs() < 1e-3);
    let angle = cal.stereo.axis_angle().norm().to_degrees();
    assert!((angle - 10.0).abs() < 1e-3, "{angle}");
}
