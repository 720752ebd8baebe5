use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::geometry::{orthonormalize, CameraIntrinsics, Pose};
use crate::{Error, Result};

/// Relative spread below which a point set counts as collinear.
const COLLINEAR_EPS: f64 = 1e-10;

/// Similarity transform moving the centroid to the origin and the mean
/// distance from it to sqrt(2).
fn normalizing_transform(pts: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = pts.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }

    // Second moments of the centred set; a vanishing minor eigenvalue means
    // the points lie on a line.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = (p - centroid) / mean_dist;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    let minor = tr / 2.0 - disc;
    if minor <= COLLINEAR_EPS * tr {
        return Err(Error::DegenerateConfiguration("points are collinear".into()));
    }

    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalized DLT estimate of the homography taking board-plane points to
/// image points. The result is scaled so `H[(2, 2)] == 1` when that entry is
/// nonzero.
pub fn estimate_homography(plane_pts: &[Vector2<f64>], img_pts: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    if plane_pts.len() != img_pts.len() {
        return Err(Error::InvalidInput(format!(
            "{} plane points but {} image points",
            plane_pts.len(),
            img_pts.len()
        )));
    }
    if plane_pts.len() < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            plane_pts.len()
        )));
    }
    let t_plane = normalizing_transform(plane_pts)?;
    let t_img = normalizing_transform(img_pts)?;

    // Pad to at least 9 rows so the SVD exposes the full right null space.
    let rows = (2 * plane_pts.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in plane_pts.iter().zip(img_pts).enumerate() {
        let p = t_plane * Vector3::new(p.x, p.y, 1.0);
        let q = t_img * Vector3::new(q.x, q.y, 1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r0 = 2 * i;
        a.row_mut(r0)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r0 + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::IllConditioned("homography SVD failed".into()))?;
    let min_idx = svd.singular_values.imin();
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_img_inv = t_img
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("image normalization".into()))?;
    let mut hm = t_img_inv * hn * t_plane;
    let h22 = hm[(2, 2)];
    if h22.abs() > f64::EPSILON * hm.amax() {
        hm /= h22;
    } else {
        hm /= hm.norm();
    }
    Ok(hm)
}

/// Board pose from a plane-to-image homography and known intrinsics.
///
/// Of the two sign solutions the one placing the board in front of the
/// camera is kept.
pub fn pose_from_homography(intr: &CameraIntrinsics, h: &Matrix3<f64>) -> Result<Pose> {
    let k_inv = intr
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("singular camera matrix".into()))?;
    let m = k_inv * h;
    let (c1, c2, c3) = (m.column(0), m.column(1), m.column(2));
    let norm = c1.norm();
    if !(norm > 0.0) {
        return Err(Error::IllConditioned("degenerate homography".into()));
    }
    let mut lambda = 1.0 / norm;
    if c3[2] * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = c1 * lambda;
    let r2 = c2 * lambda;
    let r3 = r1.cross(&r2);
    let t = c3 * lambda;
    let rot = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(Pose::new(orthonormalize(&rot), t))
}
