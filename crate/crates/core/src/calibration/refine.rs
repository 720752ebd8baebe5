//! Joint Levenberg-Marquardt refinement of a stereo calibration.
//!
//! Parameter vector layout:
//!
//! | range        | contents                                   |
//! |--------------|--------------------------------------------|
//! | `0..9`       | left intrinsics (fx fy cx cy k1 k2 p1 p2 k3) |
//! | `9..18`      | right intrinsics                           |
//! | `18..24`     | stereo pose increment (rotation, translation) |
//! | `24 + 6k..`  | left board pose increment of view `k`      |
//!
//! Rotation increments are axis-angle vectors applied on the left,
//! `R <- exp(d) R`, followed by re-orthonormalization.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{pair_views, BoardSpec, CalibrationResult, CornerObservation, ViewPoses};
use crate::geometry::{CameraIntrinsics, ImagePoint, Pose};
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOL: f64 = 1e-8;
/// A step this small relative to the parameters means the cost has hit
/// its floating-point floor even if the gradient test has not fired.
const STEP_TOL: f64 = 1e-12;
/// Relative cost decrease below which an accepted step counts as converged.
const COST_TOL: f64 = 1e-9;
const INITIAL_LAMBDA: f64 = 1e-3;
const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 10.0;
/// Below this the damped step is already pure Gauss-Newton; letting lambda
/// shrink further only delays recovery once steps start failing.
const LAMBDA_MIN: f64 = 1e-12;

const INTR: usize = 9;
const STEREO_OFFSET: usize = 2 * INTR;
const VIEW_OFFSET: usize = STEREO_OFFSET + 6;

/// Bookkeeping from one refinement run.
#[derive(Debug, Clone, PartialEq)]
pub struct LmSummary {
    /// Attempted steps, accepted or not.
    pub iterations: usize,
    pub accepted: usize,
    /// Sum of squared residuals at the start and after every accepted step.
    pub cost_history: Vec<f64>,
    /// Infinity norm of the gradient at the returned parameters.
    pub gradient_norm: f64,
}

#[derive(Clone)]
struct State {
    left: CameraIntrinsics,
    right: CameraIntrinsics,
    stereo: Pose,
    views: Vec<Pose>,
}

impl State {
    fn param_count(&self) -> usize {
        VIEW_OFFSET + 6 * self.views.len()
    }

    /// Magnitude of the intrinsic parameters, used to scale the step test.
    fn scale(&self) -> f64 {
        let l = self.left.as_array();
        let r = self.right.as_array();
        l.iter().chain(r.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    fn apply(&self, delta: &DVector<f64>) -> State {
        let bump = |intr: &CameraIntrinsics, off: usize| {
            let mut a = intr.as_array();
            for (k, v) in a.iter_mut().enumerate() {
                *v += delta[off + k];
            }
            CameraIntrinsics::from_array(a)
        };
        let pose_delta = |off: usize| {
            (
                Vector3::new(delta[off], delta[off + 1], delta[off + 2]),
                Vector3::new(delta[off + 3], delta[off + 4], delta[off + 5]),
            )
        };
        let (dr, dt) = pose_delta(STEREO_OFFSET);
        State {
            left: bump(&self.left, 0),
            right: bump(&self.right, INTR),
            stereo: self.stereo.perturbed(&dr, &dt),
            views: self
                .views
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let (dr, dt) = pose_delta(VIEW_OFFSET + 6 * k);
                    v.perturbed(&dr, &dt)
                })
                .collect(),
        }
    }
}

/// Observed corners per view, left then right, in the same order as the
/// state's views.
struct Problem<'a> {
    object: Vec<Vector3<f64>>,
    observed: Vec<(&'a [ImagePoint], &'a [ImagePoint])>,
}

impl Problem<'_> {
    fn residual_count(&self) -> usize {
        self.observed.len() * self.object.len() * 4
    }

    fn point_count(&self) -> usize {
        self.observed.len() * self.object.len() * 2
    }

    /// Residuals (projected minus observed) and optionally the Jacobian.
    fn evaluate(&self, s: &State, jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let n_res = self.residual_count();
        let mut r = DVector::zeros(n_res);
        let mut jac = jacobian.then(|| DMatrix::zeros(n_res, s.param_count()));
        let np = self.object.len();
        let skew = |v: &Vector3<f64>| -> Matrix3<f64> { Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0) };

        for (k, ((obs_l, obs_r), pose)) in self.observed.iter().zip(&s.views).enumerate() {
            let base = k * np * 4;
            let view_col = VIEW_OFFSET + 6 * k;
            for (i, x) in self.object.iter().enumerate() {
                let rx = pose.rotation * x;
                let xl = rx + pose.translation;
                let xr = s.stereo.rotation * xl + s.stereo.translation;

                let row_l = base + 2 * i;
                let row_r = base + 2 * np + 2 * i;
                if let Some(jm) = jac.as_mut() {
                    let (pl, dl_intr, dl_pt) = s.left.project_with_jacobians(&xl)?;
                    let (pr, dr_intr, dr_pt) = s.right.project_with_jacobians(&xr)?;
                    r[row_l] = pl.x - obs_l[i].x;
                    r[row_l + 1] = pl.y - obs_l[i].y;
                    r[row_r] = pr.x - obs_r[i].x;
                    r[row_r + 1] = pr.y - obs_r[i].y;

                    let dxl_drot = -skew(&rx);
                    let dl_rot = dl_pt * dxl_drot;
                    let dr_through_l = dr_pt * s.stereo.rotation;
                    let dr_rot = dr_through_l * dxl_drot;
                    let dr_srot = dr_pt * -skew(&(s.stereo.rotation * xl));

                    jm.view_mut((row_l, 0), (2, INTR)).copy_from(&dl_intr);
                    jm.view_mut((row_l, view_col), (2, 3)).copy_from(&dl_rot);
                    jm.view_mut((row_l, view_col + 3), (2, 3)).copy_from(&dl_pt);

                    jm.view_mut((row_r, INTR), (2, INTR)).copy_from(&dr_intr);
                    jm.view_mut((row_r, STEREO_OFFSET), (2, 3)).copy_from(&dr_srot);
                    jm.view_mut((row_r, STEREO_OFFSET + 3), (2, 3)).copy_from(&dr_pt);
                    jm.view_mut((row_r, view_col), (2, 3)).copy_from(&dr_rot);
                    jm.view_mut((row_r, view_col + 3), (2, 3)).copy_from(&dr_through_l);
                } else {
                    let pl = s.left.project_camera_point(&xl)?;
                    let pr = s.right.project_camera_point(&xr)?;
                    r[row_l] = pl.x - obs_l[i].x;
                    r[row_l + 1] = pl.y - obs_l[i].y;
                    r[row_r] = pr.x - obs_r[i].x;
                    r[row_r + 1] = pr.y - obs_r[i].y;
                }
            }
        }
        Ok((r, jac))
    }
}

fn setup<'a>(
    initial: &CalibrationResult,
    board: &BoardSpec,
    obs: &'a [CornerObservation],
) -> Result<(Problem<'a>, State, Vec<usize>)> {
    board.validate()?;
    let views = pair_views(board, obs)?;
    if views.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut poses = Vec::with_capacity(views.len());
    let mut ids = Vec::with_capacity(views.len());
    for v in &views {
        let vp = initial
            .view_poses
            .iter()
            .find(|p| p.view_id == v.view_id)
            .ok_or_else(|| Error::InvalidInput(format!("no initial pose for view {}", v.view_id)))?;
        poses.push(vp.left);
        ids.push(v.view_id);
    }
    let problem = Problem {
        object: board.object_points().iter().map(|p| p.to_vector()).collect(),
        observed: views.iter().map(|v| (v.left, v.right)).collect(),
    };
    let state = State {
        left: initial.left,
        right: initial.right,
        stereo: initial.stereo,
        views: poses,
    };
    Ok((problem, state, ids))
}

fn into_result(state: State, ids: &[usize], cost: f64, points: usize) -> CalibrationResult {
    let view_poses = ids
        .iter()
        .zip(&state.views)
        .map(|(&view_id, left)| ViewPoses {
            view_id,
            left: *left,
            right: state.stereo.compose(left),
        })
        .collect();
    CalibrationResult {
        left: state.left,
        right: state.right,
        view_poses,
        stereo: state.stereo,
        rms_reprojection: (cost / points as f64).sqrt(),
    }
}

/// Root-mean-square reprojection error (pixels per corner) of a calibration
/// against observations. Right-camera poses are taken through the stereo pose.
pub fn reprojection_rms(result: &CalibrationResult, board: &BoardSpec, obs: &[CornerObservation]) -> Result<f64> {
    let (problem, state, _) = setup(result, board, obs)?;
    let (r, _) = problem.evaluate(&state, false)?;
    Ok((r.norm_squared() / problem.point_count() as f64).sqrt())
}

pub fn refine_calibration(
    initial: &CalibrationResult,
    board: &BoardSpec,
    obs: &[CornerObservation],
) -> Result<CalibrationResult> {
    refine_calibration_detailed(initial, board, obs).map(|(r, _)| r)
}

/// Levenberg-Marquardt over both intrinsic sets, distortion, every view's
/// left pose and the stereo pose. Accepted steps strictly decrease the cost.
pub fn refine_calibration_detailed(
    initial: &CalibrationResult,
    board: &BoardSpec,
    obs: &[CornerObservation],
) -> Result<(CalibrationResult, LmSummary)> {
    let (problem, mut state, ids) = setup(initial, board, obs)?;
    let n = state.param_count();

    let (mut r, j) = problem.evaluate(&state, true)?;
    let mut j = j.expect("jacobian requested");
    let mut cost = r.norm_squared();
    let mut jtj = j.tr_mul(&j);
    let mut grad = j.tr_mul(&r);

    let mut summary = LmSummary {
        iterations: 0,
        accepted: 0,
        cost_history: vec![cost],
        gradient_norm: grad.amax(),
    };
    let mut lambda = INITIAL_LAMBDA;

    while summary.gradient_norm >= GRADIENT_TOL {
        if summary.iterations == MAX_ITERATIONS {
            return Err(Error::NonConvergent {
                what: "calibration refinement",
                iterations: MAX_ITERATIONS,
            });
        }
        summary.iterations += 1;

        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += lambda * jtj[(i, i)].max(f64::MIN_POSITIVE);
        }
        let Some(chol) = a.cholesky() else {
            lambda *= LAMBDA_UP;
            continue;
        };
        let delta = chol.solve(&-&grad);
        if delta.norm() <= STEP_TOL * (state.scale() + STEP_TOL) {
            break;
        }
        let candidate = state.apply(&delta);
        let new_cost = match problem.evaluate(&candidate, false) {
            Ok((rc, _)) => rc.norm_squared(),
            // A step that pushes the board behind a camera is simply rejected.
            Err(Error::PointBehindCamera { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };

        if new_cost < cost {
            let settled = cost - new_cost <= COST_TOL * cost;
            state = candidate;
            let (rn, jn) = problem.evaluate(&state, true)?;
            r = rn;
            j = jn.expect("jacobian requested");
            cost = new_cost;
            jtj = j.tr_mul(&j);
            grad = j.tr_mul(&r);
            summary.accepted += 1;
            summary.cost_history.push(cost);
            summary.gradient_norm = grad.amax();
            lambda = (lambda / LAMBDA_DOWN).max(LAMBDA_MIN);
            if settled {
                break;
            }
        } else {
            lambda *= LAMBDA_UP;
        }
    }

    Ok((into_result(state, &ids, cost, problem.point_count()), summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::Camera;
    use crate::geometry::Distortion;

    fn fixture() -> (BoardSpec, State, Vec<CornerObservation>) {
        let board = BoardSpec::new(3, 4, 2.0).unwrap();
        let state = State {
            left: CameraIntrinsics::new(700.0, 705.0, 318.0, 242.0)
                .with_distortion(Distortion::from_array([-0.2, 0.05, 0.001, -0.001, 0.01])),
            right: CameraIntrinsics::new(690.0, 700.0, 325.0, 238.0)
                .with_distortion(Distortion::radial(-0.15, 0.02, 0.0)),
            stereo: Pose::from_axis_angle(Vector3::new(0.01, -0.03, 0.005), Vector3::new(-9.0, 0.2, 0.1)),
            views: vec![
                Pose::from_axis_angle(Vector3::new(0.2, -0.1, 0.05), Vector3::new(-3.0, -2.0, 40.0)),
                Pose::from_axis_angle(Vector3::new(-0.1, 0.3, 0.0), Vector3::new(-2.0, -1.0, 45.0)),
            ],
        };
        // Observations are irrelevant to the Jacobian; any full grid works.
        let obs = (0..2)
            .flat_map(|v| {
                [Camera::Left, Camera::Right].map(|camera| CornerObservation {
                    view_id: v,
                    camera,
                    corners: vec![ImagePoint::new(100.0, 100.0); board.corner_count()],
                })
            })
            .collect();
        (board, state, obs)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (board, state, obs) = fixture();
        let initial = into_result(state.clone(), &[0, 1], 0.0, 1);
        let (problem, state, _) = setup(&initial, &board, &obs).unwrap();
        let (_, j) = problem.evaluate(&state, true).unwrap();
        let j = j.unwrap();
        let n = state.param_count();
        for col in 0..n {
            let h = if col < STEREO_OFFSET {
                1e-6 * state_scale(&state, col)
            } else {
                1e-7
            };
            let mut d = DVector::zeros(n);
            d[col] = h;
            let (rp, _) = problem.evaluate(&state.apply(&d), false).unwrap();
            d[col] = -h;
            let (rm, _) = problem.evaluate(&state.apply(&d), false).unwrap();
            let fd = (rp - rm) / (2.0 * h);
            let err = (&fd - j.column(col)).amax();
            let scale = fd.amax().max(1.0);
            assert!(err / scale < 1e-5, "column {col}: err {err}, scale {scale}");
        }
    }

    fn state_scale(s: &State, col: usize) -> f64 {
        let a = if col < INTR {
            s.left.as_array()[col]
        } else {
            s.right.as_array()[col - INTR]
        };
        a.abs().max(1e-2)
    }

    #[test]
    fn zero_residual_start_takes_no_steps() {
        let (board, state, _) = fixture();
        let object: Vec<_> = board.object_points().iter().map(|p| p.to_vector()).collect();
        let obs: Vec<CornerObservation> = state
            .views
            .iter()
            .enumerate()
            .flat_map(|(v, pose)| {
                let right = state.stereo.compose(pose);
                [(Camera::Left, state.left, *pose), (Camera::Right, state.right, right)].map(|(camera, intr, p)| {
                    CornerObservation {
                        view_id: v,
                        camera,
                        corners: object
                            .iter()
                            .map(|x| intr.project_camera_point(&p.transform(x)).unwrap())
                            .collect(),
                    }
                })
            })
            .collect();
        let initial = into_result(state.clone(), &[0, 1], 0.0, 1);
        let (out, summary) = refine_calibration_detailed(&initial, &board, &obs).unwrap();
        assert_eq!(summary.accepted, 0);
        assert_eq!(summary.iterations, 0);
        assert!(out.rms_reprojection < 1e-9);
        let before = initial.left.as_array();
        let after = out.left.as_array();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((out.stereo.translation - initial.stereo.translation).amax() <= 1e-9);
    }
}
