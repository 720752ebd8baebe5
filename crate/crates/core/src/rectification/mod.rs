//! Stereo rectification and per-pixel remap tables.

mod file;

pub use file::{load_calibration, save_calibration, CalibrationFile};

use image::GrayImage;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraIntrinsics, StereoRig};
use crate::{Error, Result};

/// Marks a destination pixel whose source falls outside the original frame.
pub const UNMAPPED: f32 = -1.0;

/// Rotations taking each original camera frame into its rectified frame,
/// plus the shared distortion-free intrinsics of the rectified pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedRig {
    pub rot_left: Matrix3<f64>,
    pub rot_right: Matrix3<f64>,
    pub new_intrinsics: CameraIntrinsics,
    /// cm
    pub baseline: f64,
}

/// Bouguet-style rectification.
///
/// The relative rotation is split evenly between the two cameras, then both
/// are turned so the rectified x-axis runs along the baseline with the right
/// camera on the +x side. The shared intrinsics average the four focal
/// lengths and both principal points.
pub fn compute_rectification(rig: &StereoRig) -> Result<RectifiedRig> {
    let baseline = rig.baseline();
    if !(baseline > 0.0) {
        return Err(Error::ZeroBaseline);
    }
    let rel = Rotation3::from_matrix_unchecked(rig.extrinsics.rotation);
    let half = Rotation3::new(rel.scaled_axis() * 0.5).into_inner();

    // After the half-rotations both frames are parallel and
    // X_right' = X_left' + t'.
    let t = half.transpose() * rig.extrinsics.translation;
    let e1 = -t / t.norm();
    let mut e2 = Vector3::z().cross(&e1);
    if e2.norm() < 1e-12 {
        // Baseline along the optical axis; no horizontal epipolar frame exists.
        return Err(Error::DegenerateConfiguration(
            "baseline is parallel to the optical axis".into(),
        ));
    }
    e2.normalize_mut();
    let e3 = e1.cross(&e2);
    let align = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);

    let f = (rig.left.fx + rig.left.fy + rig.right.fx + rig.right.fy) / 4.0;
    let new_intrinsics = CameraIntrinsics::new(
        f,
        f,
        (rig.left.cx + rig.right.cx) / 2.0,
        (rig.left.cy + rig.right.cy) / 2.0,
    );
    Ok(RectifiedRig {
        rot_left: align * half,
        rot_right: align * half.transpose(),
        new_intrinsics,
        baseline,
    })
}

/// Per-destination-pixel source coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    pub width: usize,
    pub height: usize,
    pub map_x: Vec<f32>,
    pub map_y: Vec<f32>,
}

impl RemapTable {
    pub fn identity(width: usize, height: usize) -> Self {
        let mut map_x = Vec::with_capacity(width * height);
        let mut map_y = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                map_x.push(c as f32);
                map_y.push(r as f32);
            }
        }
        Self {
            width,
            height,
            map_x,
            map_y,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Option<(f32, f32)> + Sync) -> Self {
        let mut map_x = vec![UNMAPPED; width * height];
        let mut map_y = vec![UNMAPPED; width * height];
        map_x
            .par_chunks_mut(width.max(1))
            .zip(map_y.par_chunks_mut(width.max(1)))
            .enumerate()
            .for_each(|(r, (row_x, row_y))| {
                for c in 0..width {
                    if let Some((x, y)) = f(c, r) {
                        row_x[c] = x;
                        row_y[c] = y;
                    }
                }
            });
        Self {
            width,
            height,
            map_x,
            map_y,
        }
    }

    pub fn get(&self, col: usize, row: usize) -> (f32, f32) {
        let i = row * self.width + col;
        (self.map_x[i], self.map_y[i])
    }

    pub fn is_unmapped(&self, col: usize, row: usize) -> bool {
        let (x, y) = self.get(col, row);
        x == UNMAPPED && y == UNMAPPED
    }
}

/// Builds one camera's table: rectified pixel -> ray -> inverse rectifying
/// rotation -> original distortion and pixel mapping.
fn build_table(
    rot: &Matrix3<f64>,
    new_intr: &CameraIntrinsics,
    original: &CameraIntrinsics,
    size: (usize, usize),
) -> RemapTable {
    let (w, h) = size;
    let inv = rot.transpose();
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    RemapTable::from_fn(w, h, |c, r| {
        let ray = Vector3::new(
            (c as f64 - new_intr.cx) / new_intr.fx,
            (r as f64 - new_intr.cy) / new_intr.fy,
            1.0,
        );
        let src = original.project_camera_point(&(inv * ray)).ok()?;
        ((0.0..=max_x).contains(&src.x) && (0.0..=max_y).contains(&src.y)).then_some((src.x as f32, src.y as f32))
    })
}

/// The four lookup tables (left x/y, right x/y) for a rectified rig.
pub fn build_remap_tables(
    rect: &RectifiedRig,
    left: &CameraIntrinsics,
    right: &CameraIntrinsics,
    size: (usize, usize),
) -> Result<(RemapTable, RemapTable)> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidInput("empty frame size".into()));
    }
    Ok((
        build_table(&rect.rot_left, &rect.new_intrinsics, left, size),
        build_table(&rect.rot_right, &rect.new_intrinsics, right, size),
    ))
}

/// Warps `image` through `table` with bilinear interpolation; unmapped or
/// out-of-frame destinations become 0.
pub fn remap(image: &GrayImage, table: &RemapTable) -> Result<GrayImage> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (table.width, table.height) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (table.width, table.height),
            found: (w, h),
        });
    }
    let src = image.as_raw();
    let mut out = vec![0u8; w * h];
    let (max_x, max_y) = ((w - 1) as f32, (h - 1) as f32);
    out.par_chunks_mut(w.max(1)).enumerate().for_each(|(r, row)| {
        let span = r * w..(r + 1) * w;
        let coords = table.map_x[span.clone()].iter().zip(&table.map_y[span]);
        for (px, (&sx, &sy)) in row.iter_mut().zip(coords) {
            if !(sx >= 0.0 && sy >= 0.0 && sx <= max_x && sy <= max_y) {
                continue;
            }
            // Coordinates are non-negative here, so truncation is floor.
            let (x0, y0) = (sx as usize, sy as usize);
            let fx = sx - x0 as f32;
            let fy = sy - y0 as f32;
            let i = y0 * w + x0;
            let dx = usize::from(x0 + 1 < w);
            let dy = if y0 + 1 < h { w } else { 0 };
            let p = |k: usize| src[k] as f32;
            let top = p(i) + (p(i + dx) - p(i)) * fx;
            let bottom = p(i + dy) + (p(i + dy + dx) - p(i + dy)) * fx;
            let v = top + (bottom - top) * fy;
            *px = (v + 0.5).min(255.0) as u8;
        }
    });
    Ok(GrayImage::from_raw(w as u32, h as u32, out).expect("buffer sized to frame"))
}

/// Rectification state needed at run time: the rig and its four maps.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoMaps {
    pub rectified: RectifiedRig,
    pub left: RemapTable,
    pub right: RemapTable,
}

impl StereoMaps {
    pub fn from_rig(rig: &StereoRig, size: (usize, usize)) -> Result<Self> {
        let rectified = compute_rectification(rig)?;
        let (left, right) = build_remap_tables(&rectified, &rig.left, &rig.right, size)?;
        Ok(Self { rectified, left, right })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.left.width, self.left.height)
    }

    /// Undistorts and rectifies a frame pair.
    pub fn rectify_pair(&self, left: &GrayImage, right: &GrayImage) -> Result<(GrayImage, GrayImage)> {
        let (l, r) = rayon::join(|| remap(left, &self.left), || remap(right, &self.right));
        Ok((l?, r?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Distortion, Pose};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 80.0, 60.0)
    }

    #[test]
    fn parallel_rig_is_a_fixed_point() {
        let rect = compute_rectification(&StereoRig::ideal(intr(), 9.0)).unwrap();
        assert!((rect.rot_left - Matrix3::identity()).amax() < 1e-15);
        assert!((rect.rot_right - Matrix3::identity()).amax() < 1e-15);
        assert_eq!(rect.baseline, 9.0);
    }

    #[test]
    fn zero_baseline_rejected() {
        let rig = StereoRig {
            left: intr(),
            right: intr(),
            extrinsics: Pose::identity(),
        };
        assert!(matches!(compute_rectification(&rig), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn rectified_rotations_are_orthonormal_and_aligned() {
        let rig = StereoRig {
            left: intr(),
            right: intr(),
            extrinsics: Pose::from_axis_angle(Vector3::new(0.02, -0.17, 0.01), Vector3::new(-8.9, 0.3, 0.8)),
        };
        let rect = compute_rectification(&rig).unwrap();
        for r in [rect.rot_left, rect.rot_right] {
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
        // In rectified frames the right camera sits at +x of the left one.
        let rel_rot = rect.rot_right * rig.extrinsics.rotation * rect.rot_left.transpose();
        assert!((rel_rot - Matrix3::identity()).amax() < 1e-12);
        let t = rect.rot_right * rig.extrinsics.translation;
        assert!(t.x < 0.0 && t.y.abs() < 1e-12 && t.z.abs() < 1e-12);
    }

    #[test]
    fn identity_tables() {
        let rect = compute_rectification(&StereoRig::ideal(intr(), 5.0)).unwrap();
        let (l, r) = build_remap_tables(&rect, &intr(), &intr(), (160, 120)).unwrap();
        assert_eq!(l, RemapTable::identity(160, 120));
        assert_eq!(r, RemapTable::identity(160, 120));
    }

    #[test]
    fn principal_point_shift_offsets_map() {
        let rect = compute_rectification(&StereoRig::ideal(intr(), 5.0)).unwrap();
        let mut shifted = intr();
        shifted.cx += 2.0;
        let (l, _) = build_remap_tables(&rect, &shifted, &shifted, (160, 120)).unwrap();
        for r in 0..120 {
            for c in 0..158 {
                let (x, y) = l.get(c, r);
                assert_eq!(x, c as f32 + 2.0);
                assert_eq!(y, r as f32);
            }
            assert!(l.is_unmapped(158, r) && l.is_unmapped(159, r));
        }
    }

    #[test]
    fn strong_distortion_marks_corners_unmapped() {
        let original = intr().with_distortion(Distortion::radial(0.8, 0.5, 0.0));
        let rect = compute_rectification(&StereoRig::ideal(intr(), 5.0)).unwrap();
        let (l, _) = build_remap_tables(&rect, &original, &original, (160, 120)).unwrap();
        // Source of the top-left corner lands at negative coordinates.
        let x = (0.0 - 80.0) / 500.0;
        let y = (0.0 - 60.0) / 500.0;
        let src = original.distort_normalized(x, y);
        assert!(src.x < 0.0 || src.y < 0.0);
        assert!(l.is_unmapped(0, 0));
        assert!(l.is_unmapped(159, 119));
        assert!(!l.is_unmapped(80, 60));
    }

    #[test]
    fn identity_remap_is_bitwise_identity() {
        let img = GrayImage::from_fn(37, 23, |c, r| image::Luma([((c * 7 + r * 13) % 256) as u8]));
        let out = remap(&img, &RemapTable::identity(37, 23)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let img = GrayImage::from_fn(20, 5, |c, _| image::Luma([(c * 10) as u8]));
        let table = RemapTable::from_fn(20, 5, |c, r| Some((c as f32 + 0.5, r as f32)));
        let out = remap(&img, &table).unwrap();
        for r in 0..5 {
            for c in 0..19 {
                let mean = (img.get_pixel(c, r)[0] as u32 + img.get_pixel(c + 1, r)[0] as u32) / 2;
                assert_eq!(out.get_pixel(c, r)[0] as u32, mean);
            }
        }
    }

    #[test]
    fn unmapped_table_gives_black() {
        let img = GrayImage::from_pixel(8, 8, image::Luma([200]));
        let out = remap(&img, &RemapTable::from_fn(8, 8, |_, _| None)).unwrap();
        assert!(out.pixels().all(|p| p[0] == 0));
    }

    #[test]
    fn dimension_mismatch() {
        let img = GrayImage::new(8, 8);
        assert!(matches!(
            remap(&img, &RemapTable::identity(8, 9)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn remap_identity_on_random_images(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
                let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
                    let v = seed.wrapping_mul(6364136223846793005).wrapping_add((r as u64) << 32 | c as u64);
                    image::Luma([(v >> 56) as u8])
                });
                prop_assert_eq!(remap(&img, &RemapTable::identity(w, h)).unwrap(), img);
            }
        }
    }
}
