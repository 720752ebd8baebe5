//! Saddle-point refinement of chessboard corners.
//!
//! For a true corner `q`, the image gradient at every nearby pixel `p` is
//! orthogonal to `p - q` (on a flat patch the gradient vanishes, on an edge
//! through `q` it is perpendicular to the edge). Summing
//! `g gᵀ (p - q) = 0` over a window gives a 2x2 linear system for `q`,
//! solved repeatedly with the window recentred at each new estimate.

use image::GrayImage;
use nalgebra::{Matrix2, Vector2};

use crate::geometry::ImagePoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubpixelCriteria {
    /// Half-size of the search window, pixels.
    pub window: usize,
    pub max_iter: usize,
    /// Stop once an update moves the point less than this, pixels.
    pub eps: f64,
}

impl Default for SubpixelCriteria {
    fn default() -> Self {
        Self {
            window: 5,
            max_iter: 30,
            eps: 1e-3,
        }
    }
}

/// Pre-smoothing applied before taking gradients. Without it the
/// gradient energy of a pixel-integrated edge is lopsided and pulls the
/// estimate toward the brighter-covered pixel.
const SMOOTH_SIGMA: f64 = 1.0;
const SMOOTH_RADIUS: i64 = 3;

/// Gaussian-smoothed intensities over the square `[cx - r, cx + r]`,
/// row-major with side `2r + 1`. The caller guarantees the source window
/// (`r + SMOOTH_RADIUS` around the center) lies inside the image.
fn smoothed_patch(img: &GrayImage, cx: i64, cy: i64, r: i64) -> Vec<f64> {
    let kernel: Vec<f64> = (-SMOOTH_RADIUS..=SMOOTH_RADIUS)
        .map(|k| (-((k * k) as f64) / (2.0 * SMOOTH_SIGMA * SMOOTH_SIGMA)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let side = (2 * r + 1) as usize;
    let tall = (2 * (r + SMOOTH_RADIUS) + 1) as usize;
    let px = |x: i64, y: i64| img.get_pixel(x as u32, y as u32)[0] as f64;

    // Horizontal pass over the taller strip, then vertical.
    let mut horiz = vec![0.0; tall * side];
    for (j, y) in (cy - r - SMOOTH_RADIUS..=cy + r + SMOOTH_RADIUS).enumerate() {
        for (i, x) in (cx - r..=cx + r).enumerate() {
            horiz[j * side + i] = kernel
                .iter()
                .zip(-SMOOTH_RADIUS..=SMOOTH_RADIUS)
                .map(|(k, o)| k * px(x + o, y))
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; side * side];
    for j in 0..side {
        for i in 0..side {
            out[j * side + i] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * horiz[(j + t) * side + i])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

fn refine_one(img: &GrayImage, guess: ImagePoint, crit: &SubpixelCriteria) -> Result<ImagePoint> {
    let half = crit.window as i64;
    // Window, one gradient tap, the smoothing kernel and rounding slack.
    let margin = (half + 1 + SMOOTH_RADIUS + 1) as f64;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let inside = |q: &Vector2<f64>| {
        q.x - margin >= 0.0 && q.y - margin >= 0.0 && q.x + margin <= w - 1.0 && q.y + margin <= h - 1.0
    };

    let sigma2 = (crit.window as f64 / 2.0).max(1.0).powi(2);
    let r = half + 1;
    let side = (2 * r + 1) as usize;
    let mut q = Vector2::new(guess.x, guess.y);
    for _ in 0..crit.max_iter {
        if !inside(&q) {
            return Err(Error::OutOfBounds { x: q.x, y: q.y });
        }
        let (cx, cy) = (q.x.round() as i64, q.y.round() as i64);
        let patch = smoothed_patch(img, cx, cy, r);
        let at = |i: i64, j: i64| patch[((j + r) as usize) * side + (i + r) as usize];
        let mut a = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for dy in -half..=half {
            for dx in -half..=half {
                let p = Vector2::new((cx + dx) as f64, (cy + dy) as f64);
                let gx = (at(dx + 1, dy) - at(dx - 1, dy)) / 2.0;
                let gy = (at(dx, dy + 1) - at(dx, dy - 1)) / 2.0;
                let weight = (-(p - q).norm_squared() / (2.0 * sigma2)).exp();
                let gg = Matrix2::new(gx * gx, gx * gy, gx * gy, gy * gy) * weight;
                a += gg;
                b += gg * p;
            }
        }
        let energy = a.trace();
        if energy < 1e-9 || a.determinant() <= 1e-12 * energy * energy {
            return Err(Error::FlatRegion { x: q.x, y: q.y });
        }
        let next = a.try_inverse().ok_or(Error::FlatRegion { x: q.x, y: q.y })? * b;
        let step = (next - q).norm();
        q = next;
        if step < crit.eps {
            break;
        }
    }
    if !inside(&q) {
        return Err(Error::OutOfBounds { x: q.x, y: q.y });
    }
    Ok(ImagePoint::new(q.x, q.y))
}

/// Refines each guessed corner to sub-pixel accuracy.
pub fn refine_corners_subpixel(
    image: &GrayImage,
    guesses: &[ImagePoint],
    criteria: &SubpixelCriteria,
) -> Result<Vec<ImagePoint>> {
    if criteria.window < 2 {
        return Err(Error::InvalidInput(format!(
            "window half-size must be at least 2, got {}",
            criteria.window
        )));
    }
    if criteria.max_iter == 0 || !(criteria.eps > 0.0) {
        return Err(Error::InvalidInput("max_iter and eps must be positive".into()));
    }
    guesses
        .iter()
        .map(|g| {
            if !g.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite guess {g:?}")));
            }
            refine_one(image, *g, criteria)
        })
        .collect()
}
