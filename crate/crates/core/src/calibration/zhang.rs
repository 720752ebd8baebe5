use nalgebra::{DMatrix, Matrix3, RowSVector};

use crate::geometry::CameraIntrinsics;
use crate::{Error, Result};

/// Ratio of the second-smallest to the largest singular value below which
/// the conic system is treated as rank-deficient.
const RANK_TOL: f64 = 1e-9;

fn v_ij(h: &Matrix3<f64>, i: usize, j: usize) -> RowSVector<f64, 6> {
    RowSVector::<f64, 6>::from_row_slice(&[
        h[(0, i)] * h[(0, j)],
        h[(0, i)] * h[(1, j)] + h[(1, i)] * h[(0, j)],
        h[(1, i)] * h[(1, j)],
        h[(2, i)] * h[(0, j)] + h[(0, i)] * h[(2, j)],
        h[(2, i)] * h[(1, j)] + h[(1, i)] * h[(2, j)],
        h[(2, i)] * h[(2, j)],
    ])
}

/// Closed-form intrinsics from plane homographies (Zhang's method with the
/// zero-skew constraint). Distortion starts at zero.
///
/// Homographies are conditioned by a similarity built from `frame`
/// (width, height) before the image of the absolute conic is solved.
pub fn init_intrinsics(homographies: &[Matrix3<f64>], frame: (usize, usize)) -> Result<CameraIntrinsics> {
    if homographies.len() < 3 {
        return Err(Error::InsufficientViews {
            needed: 3,
            got: homographies.len(),
        });
    }
    let (w, h) = (frame.0 as f64, frame.1 as f64);
    let s = (w + h) / 2.0;
    if !(s > 0.0) {
        return Err(Error::InvalidInput("empty frame size".into()));
    }
    let norm = Matrix3::new(
        1.0 / s,
        0.0,
        -w / (2.0 * s),
        0.0,
        1.0 / s,
        -h / (2.0 * s),
        0.0,
        0.0,
        1.0,
    );

    let mut v = DMatrix::<f64>::zeros(2 * homographies.len() + 1, 6);
    for (k, hm) in homographies.iter().enumerate() {
        let hn = norm * hm;
        let hn = hn / hn.norm();
        v.set_row(2 * k, &v_ij(&hn, 0, 1));
        v.set_row(2 * k + 1, &(v_ij(&hn, 0, 0) - v_ij(&hn, 1, 1)));
    }
    // B12 = 0 (zero skew).
    v[(2 * homographies.len(), 1)] = 1.0;

    let svd = v.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::IllConditioned("conic SVD failed".into()))?;
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[4]];
    if !(largest > 0.0) || second_smallest / largest < RANK_TOL {
        return Err(Error::IllConditioned(format!(
            "homography constraints are rank-deficient (sigma ratio {:.3e})",
            second_smallest / largest
        )));
    }
    let b = v_t.row(order[5]);
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);

    let denom = b11 * b22 - b12 * b12;
    if denom.abs() < f64::EPSILON || b11.abs() < f64::EPSILON {
        return Err(Error::IllConditioned("degenerate absolute conic".into()));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    let alpha2 = lambda / b11;
    let beta2 = lambda * b11 / denom;
    if !(alpha2 > 0.0 && beta2 > 0.0) {
        return Err(Error::IllConditioned("absolute conic is not positive definite".into()));
    }
    let alpha = alpha2.sqrt();
    let beta = beta2.sqrt();
    let u0 = -b13 * alpha2 / lambda;

    // Undo the conditioning: K = N^-1 * K'.
    Ok(CameraIntrinsics::new(
        alpha * s,
        beta * s,
        u0 * s + w / 2.0,
        v0 * s + h / 2.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use nalgebra::Vector3;

    fn homography(k: &Matrix3<f64>, pose: &Pose) -> Matrix3<f64> {
        let r = pose.rotation;
        k * Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), pose.translation])
    }

    fn poses() -> Vec<Pose> {
        [
            (Vector3::new(0.3, 0.0, 0.0), Vector3::new(-10.0, -8.0, 60.0)),
            (Vector3::new(0.0, 0.35, 0.1), Vector3::new(-12.0, -6.0, 55.0)),
            (Vector3::new(-0.25, -0.2, 0.0), Vector3::new(-8.0, -9.0, 70.0)),
            (Vector3::new(0.15, -0.3, -0.2), Vector3::new(-11.0, -5.0, 65.0)),
            (Vector3::new(-0.1, 0.25, 0.3), Vector3::new(-9.0, -7.0, 50.0)),
        ]
        .into_iter()
        .map(|(r, t)| Pose::from_axis_angle(r, t))
        .collect()
    }

    #[test]
    fn recovers_known_intrinsics() {
        let truth = CameraIntrinsics::new(800.0, 810.0, 320.0, 240.0);
        let k = truth.matrix();
        let hs: Vec<_> = poses().iter().map(|p| homography(&k, p)).collect();
        let got = init_intrinsics(&hs, (640, 480)).unwrap();
        for (g, t) in [(got.fx, 800.0), (got.fy, 810.0), (got.cx, 320.0), (got.cy, 240.0)] {
            assert!((g - t).abs() / t < 0.005, "{got:?}");
        }
    }

    #[test]
    fn two_views_are_insufficient() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).matrix();
        let hs: Vec<_> = poses()[..2].iter().map(|p| homography(&k, p)).collect();
        assert!(matches!(
            init_intrinsics(&hs, (640, 480)),
            Err(Error::InsufficientViews { got: 2, .. })
        ));
    }

    #[test]
    fn identical_fronto_parallel_views_are_ill_conditioned() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).matrix();
        let pose = Pose::new(Matrix3::identity(), Vector3::new(-10.0, -7.5, 60.0));
        let hs = vec![homography(&k, &pose); 4];
        assert!(matches!(
            init_intrinsics(&hs, (640, 480)),
            Err(Error::IllConditioned(_))
        ));
    }
}
