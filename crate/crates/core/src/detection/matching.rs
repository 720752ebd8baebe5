use super::Detection;

/// Row tolerance after rectification, pixels.
pub const DEFAULT_ROW_TOL: f64 = 10.0;

/// A detection seen in both rectified views.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoDetectionPair {
    pub left: Detection,
    pub right: Detection,
}

impl StereoDetectionPair {
    /// Horizontal offset of the target points, `x_left - x_right`.
    pub fn disparity(&self) -> f64 {
        self.left.center.x - self.right.center.x
    }

    pub fn row_offset(&self) -> f64 {
        (self.left.center.y - self.right.center.y).abs()
    }
}

/// Greedy left/right association.
///
/// A candidate pair needs equal labels, positive disparity and a row offset
/// of at most `row_tol`. Candidates are taken by ascending row offset, then
/// larger combined confidence, then smaller disparity, and each detection is
/// used at most once. Pairs come back ordered by left target x.
pub fn match_stereo(left: &[Detection], right: &[Detection], row_tol: f64) -> Vec<StereoDetectionPair> {
    match_stereo_indices(left, right, row_tol)
        .into_iter()
        .map(|(li, ri)| StereoDetectionPair {
            left: left[li].clone(),
            right: right[ri].clone(),
        })
        .collect()
}

/// [`match_stereo`], returning `(left index, right index)` pairs.
pub fn match_stereo_indices(left: &[Detection], right: &[Detection], row_tol: f64) -> Vec<(usize, usize)> {
    struct Candidate {
        li: usize,
        ri: usize,
        dy: f64,
        conf: f64,
        dx: f64,
    }

    let mut candidates = Vec::new();
    for (li, l) in left.iter().enumerate() {
        for (ri, r) in right.iter().enumerate() {
            if l.label != r.label {
                continue;
            }
            let dx = l.center.x - r.center.x;
            let dy = (l.center.y - r.center.y).abs();
            if dx > 0.0 && dy <= row_tol {
                candidates.push(Candidate {
                    li,
                    ri,
                    dy,
                    conf: l.confidence + r.confidence,
                    dx,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.dy.total_cmp(&b.dy)
            .then(b.conf.total_cmp(&a.conf))
            .then(a.dx.total_cmp(&b.dx))
            .then(a.li.cmp(&b.li))
            .then(a.ri.cmp(&b.ri))
    });

    let mut used_l = vec![false; left.len()];
    let mut used_r = vec![false; right.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if used_l[c.li] || used_r[c.ri] {
            continue;
        }
        used_l[c.li] = true;
        used_r[c.ri] = true;
        pairs.push((c.li, c.ri));
    }
    pairs.sort_by(|a, b| left[a.0].center.x.total_cmp(&left[b.0].center.x).then(a.0.cmp(&b.0)));
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BoundingBox;

    fn det(label: &str, x: f64, y: f64, conf: f64) -> Detection {
        Detection::new(
            label,
            conf,
            BoundingBox::new(x - 5.0, y - 5.0, x + 5.0, y + 5.0).unwrap(),
        )
    }

    #[test]
    fn one_car_each_side() {
        let pairs = match_stereo(&[det("car", 300.0, 200.0, 0.9)], &[det("car", 250.0, 200.0, 0.8)], 10.0);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].disparity(), 50.0);
    }

    #[test]
    fn negative_disparity_rejected() {
        let pairs = match_stereo(&[det("car", 250.0, 200.0, 0.9)], &[det("car", 300.0, 200.0, 0.8)], 10.0);
        assert!(pairs.is_empty());
    }

    #[test]
    fn labels_and_rows_must_agree() {
        assert!(match_stereo(&[det("car", 300.0, 200.0, 0.9)], &[det("bus", 250.0, 200.0, 0.8)], 10.0).is_empty());
        assert!(match_stereo(&[det("car", 300.0, 200.0, 0.9)], &[det("car", 250.0, 211.0, 0.8)], 10.0).is_empty());
    }

    #[test]
    fn two_cars_order_preserving() {
        // Both assignments are geometrically admissible; the row offsets
        // decide. Order-preserving: dy = 1 and 2, crossed: dy = 6 and 3.
        let left = [det("car", 200.0, 100.0, 0.9), det("car", 400.0, 104.0, 0.9)];
        let right = [det("car", 150.0, 101.0, 0.9), det("car", 190.0, 106.0, 0.9)];
        let pairs = match_stereo(&left, &right, 10.0);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].left.center.x, 200.0);
        assert_eq!(pairs[0].right.center.x, 150.0);
        assert_eq!(pairs[1].left.center.x, 400.0);
        assert_eq!(pairs[1].right.center.x, 190.0);
    }

    #[test]
    fn confidence_then_disparity_break_ties() {
        let left = [det("car", 300.0, 100.0, 0.5)];
        let right = [det("car", 250.0, 100.0, 0.5), det("car", 260.0, 100.0, 0.9)];
        let pairs = match_stereo(&left, &right, 10.0);
        assert_eq!(pairs[0].right.center.x, 260.0);

        let right = [det("car", 250.0, 100.0, 0.5), det("car", 260.0, 100.0, 0.5)];
        let pairs = match_stereo(&left, &right, 10.0);
        assert_eq!(pairs[0].right.center.x, 260.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dets() -> impl Strategy<Value = Vec<Detection>> {
            proptest::collection::vec(
                (
                    prop_oneof![Just("car"), Just("bus")],
                    10.0f64..600.0,
                    10.0f64..400.0,
                    0.0f64..1.0,
                ),
                0..8,
            )
            .prop_map(|v| v.into_iter().map(|(l, x, y, c)| det(l, x, y, c)).collect())
        }

        proptest! {
            #[test]
            fn pairs_are_injective_and_admissible(left in dets(), right in dets(), tol in 0.0f64..30.0) {
                let idx = match_stereo_indices(&left, &right, tol);
                let mut seen_l = std::collections::HashSet::new();
                let mut seen_r = std::collections::HashSet::new();
                for &(li, ri) in &idx {
                    prop_assert!(seen_l.insert(li));
                    prop_assert!(seen_r.insert(ri));
                }
                for p in match_stereo(&left, &right, tol) {
                    prop_assert_eq!(&p.left.label, &p.right.label);
                    prop_assert!(p.disparity() > 0.0);
                    prop_assert!(p.row_offset() <= tol);
                }
            }
        }
    }
}
