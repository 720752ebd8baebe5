use nalgebra::{Rotation3, UnitQuaternion, Vector3, Vector4};

use crate::geometry::{orthonormalize, Pose};
use crate::{Error, Result};

/// Right-relative-to-left pose averaged over views.
///
/// Each view contributes `R = R_r * R_lᵀ`, `t = t_r - R * t_l`. Rotations are
/// averaged as sign-aligned quaternions (renormalized sum), translations
/// arithmetically. A single view is returned as-is.
pub fn solve_stereo_extrinsics(left_poses: &[Pose], right_poses: &[Pose]) -> Result<Pose> {
    if left_poses.len() != right_poses.len() {
        return Err(Error::InvalidInput(format!(
            "{} left poses but {} right poses",
            left_poses.len(),
            right_poses.len()
        )));
    }
    if left_poses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let relative: Vec<Pose> = left_poses
        .iter()
        .zip(right_poses)
        .map(|(l, r)| {
            let rot = r.rotation * l.rotation.transpose();
            Pose::new(rot, r.translation - rot * l.translation)
        })
        .collect();
    if relative.len() == 1 {
        return Ok(relative[0]);
    }

    let mut q_sum = Vector4::zeros();
    let mut reference: Option<Vector4<f64>> = None;
    let mut t_sum = Vector3::zeros();
    for p in &relative {
        let rot = Rotation3::from_matrix_unchecked(orthonormalize(&p.rotation));
        let q = UnitQuaternion::from_rotation_matrix(&rot).into_inner().coords;
        let q = match reference {
            None => {
                reference = Some(q);
                q
            }
            Some(r) if r.dot(&q) < 0.0 => -q,
            Some(_) => q,
        };
        q_sum += q;
        t_sum += p.translation;
    }
    let mean = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q_sum));
    let rotation = orthonormalize(&mean.to_rotation_matrix().into_inner());
    Ok(Pose::new(rotation, t_sum / relative.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    #[test]
    fn shifted_rig() {
        let views: Vec<Pose> = (0..4)
            .map(|i| {
                Pose::from_axis_angle(
                    Vector3::new(0.1 * i as f64, -0.05, 0.02),
                    Vector3::new(i as f64, -3.0, 50.0 + 5.0 * i as f64),
                )
            })
            .collect();
        // Right camera center 9 cm along +X: X_r = X_l - (9, 0, 0).
        let shift = Pose::new(Matrix3::identity(), Vector3::new(-9.0, 0.0, 0.0));
        let rights: Vec<Pose> = views.iter().map(|v| shift.compose(v)).collect();
        let got = solve_stereo_extrinsics(&views, &rights).unwrap();
        assert!((got.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!((got.translation - Vector3::new(-9.0, 0.0, 0.0)).amax() < 1e-12);
        assert!((got.translation.norm() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn same_poses_give_identity() {
        let views = vec![Pose::from_axis_angle(Vector3::new(0.2, 0.1, 0.0), Vector3::new(1.0, 2.0, 40.0)); 3];
        let got = solve_stereo_extrinsics(&views, &views).unwrap();
        assert!((got.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(got.translation.norm() < 1e-12);
    }

    #[test]
    fn single_view_is_exact() {
        let l = Pose::from_axis_angle(Vector3::new(0.2, 0.1, 0.0), Vector3::new(1.0, 2.0, 40.0));
        let r = Pose::from_axis_angle(Vector3::new(0.21, 0.08, 0.01), Vector3::new(-8.0, 2.1, 40.3));
        let got = solve_stereo_extrinsics(&[l], &[r]).unwrap();
        let rot = r.rotation * l.rotation.transpose();
        assert_eq!(got.rotation, rot);
        assert_eq!(got.translation, r.translation - rot * l.translation);
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(matches!(solve_stereo_extrinsics(&[], &[]), Err(Error::EmptyInput)));
        assert!(solve_stereo_extrinsics(&[Pose::identity()], &[]).is_err());
    }
}
