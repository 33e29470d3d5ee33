//! Box representations, overlap metrics and non-maximum suppression.

use alloc::vec::Vec;

/// Smallest side a box may have after clamping.
pub const MIN_SIDE: f64 = 1e-4;

/// Axis-aligned box in normalized center/size form.
///
/// Coordinates are fractions of the image size, so a box covering the whole
/// image is `(0.5, 0.5, 1.0, 1.0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Axis-aligned box in corner form, `x0 <= x1` and `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CornerBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub const FULL_IMAGE: BoundingBox = BoundingBox::new(0.5, 0.5, 1.0, 1.0);

    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn to_corners(self) -> CornerBox {
        CornerBox {
            x0: self.cx - self.w / 2.0,
            y0: self.cy - self.h / 2.0,
            x1: self.cx + self.w / 2.0,
            y1: self.cy + self.h / 2.0,
        }
    }

    pub fn from_corners(c: CornerBox) -> Self {
        Self {
            cx: (c.x0 + c.x1) / 2.0,
            cy: (c.y0 + c.y1) / 2.0,
            w: c.x1 - c.x0,
            h: c.y1 - c.y0,
        }
    }

    /// Forces every component into `[0, 1]` and both sides to at least
    /// [`MIN_SIDE`]. NaN components become the lower bound.
    pub fn clamped(self) -> Self {
        Self {
            cx: clamp_unit(self.cx, 0.0),
            cy: clamp_unit(self.cy, 0.0),
            w: clamp_unit(self.w, MIN_SIDE),
            h: clamp_unit(self.h, MIN_SIDE),
        }
    }

    pub fn is_valid(self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }

    pub fn area(self) -> f64 {
        self.w * self.h
    }

    pub fn center_distance_sq(self, other: BoundingBox) -> f64 {
        let dx = self.cx - other.cx;
        let dy = self.cy - other.cy;
        dx * dx + dy * dy
    }
}

fn clamp_unit(x: f64, lo: f64) -> f64 {
    if x.is_nan() || x < lo {
        lo
    } else if x > 1.0 {
        1.0
    } else {
        x
    }
}

impl CornerBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &CornerBox) -> f64 {
        let iw = self.x1.min(other.x1) - self.x0.max(other.x0);
        let ih = self.y1.min(other.y1) - self.y0.max(other.y0);
        if iw > 0.0 && ih > 0.0 {
            iw * ih
        } else {
            0.0
        }
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &CornerBox) -> CornerBox {
        CornerBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

impl From<BoundingBox> for CornerBox {
    fn from(b: BoundingBox) -> Self {
        b.to_corners()
    }
}

impl From<CornerBox> for BoundingBox {
    fn from(c: CornerBox) -> Self {
        BoundingBox::from_corners(c)
    }
}

pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered
/// by the union. Falls back to IoU when the enclosing box has no area.
pub fn giou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let enclosing = a.enclosing(b).area();
    if enclosing > 0.0 {
        iou - (enclosing - union) / enclosing
    } else {
        iou
    }
}

/// GIoU of `a` against a fixed `b`, with its gradient with respect to `a`'s
/// `(cx, cy, w, h)`.
///
/// The function is piecewise smooth; at the measure-zero kinks (coinciding
/// edges) the one-sided derivative favoring `b` is returned.
pub fn giou_with_grad(a: BoundingBox, b: BoundingBox) -> (f64, [f64; 4]) {
    let ca = a.to_corners();
    let cb = b.to_corners();
    let aw = ca.width();
    let ah = ca.height();
    let area_a = aw * ah;
    let area_b = cb.area();

    let iw = ca.x1.min(cb.x1) - ca.x0.max(cb.x0);
    let ih = ca.y1.min(cb.y1) - ca.y0.max(cb.y0);
    let overlapping = iw > 0.0 && ih > 0.0;
    let inter = if overlapping { iw * ih } else { 0.0 };
    let union = area_a + area_b - inter;

    let ew = ca.x1.max(cb.x1) - ca.x0.min(cb.x0);
    let eh = ca.y1.max(cb.y1) - ca.y0.min(cb.y0);
    let enclosing = ew * eh;

    if union <= 0.0 || enclosing <= 0.0 {
        return (giou(&ca, &cb), [0.0; 4]);
    }
    let value = inter / union - (enclosing - union) / enclosing;

    // Partial derivatives with respect to the corners (x0, y0, x1, y1) of `a`.
    let d_area = [-ah, -aw, ah, aw];
    let d_inter = if overlapping {
        [
            if ca.x0 > cb.x0 { -ih } else { 0.0 },
            if ca.y0 > cb.y0 { -iw } else { 0.0 },
            if ca.x1 < cb.x1 { ih } else { 0.0 },
            if ca.y1 < cb.y1 { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let d_enclosing = [
        if ca.x0 < cb.x0 { -eh } else { 0.0 },
        if ca.y0 < cb.y0 { -ew } else { 0.0 },
        if ca.x1 > cb.x1 { eh } else { 0.0 },
        if ca.y1 > cb.y1 { ew } else { 0.0 },
    ];

    let mut d_corner = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        d_corner[k] = d_inter[k] / union - inter * d_union / (union * union) + d_union / enclosing
            - union * d_enclosing[k] / (enclosing * enclosing);
    }
    let [dx0, dy0, dx1, dy1] = d_corner;
    let grad = [dx0 + dx1, dy0 + dy1, (dx1 - dx0) / 2.0, (dy1 - dy0) / 2.0];
    (value, grad)
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited in descending score order (ties broken by the lower
/// index) and a candidate is dropped when its IoU with an already kept box
/// exceeds `iou_threshold`. Returns the kept indices in visiting order.
pub fn nms(boxes: &[CornerBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes and scores differ in length");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));

    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn corners_of_full_and_half_boxes() {
        assert_eq!(BoundingBox::new(0.5, 0.5, 1.0, 1.0).to_corners(), CornerBox::new(0.0, 0.0, 1.0, 1.0));
        assert_eq!(
            BoundingBox::new(0.5, 0.5, 0.5, 0.5).to_corners(),
            CornerBox::new(0.25, 0.25, 0.75, 0.75)
        );
    }

    #[test]
    fn corner_round_trip_is_identity() {
        let mut r = rng::seeded(11);
        for _ in 0..1000 {
            let b = BoundingBox::new(r.random(), r.random(), r.random_range(1e-3..1.0), r.random_range(1e-3..1.0));
            let back = BoundingBox::from_corners(b.to_corners());
            for (x, y) in b.to_array().iter().zip(back.to_array()) {
                assert!(close(*x, y, 1e-12));
            }
        }
    }

    #[test]
    fn iou_examples() {
        let a = CornerBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &CornerBox::new(1.0, 1.0, 2.0, 2.0)), 0.0);
        assert!(close(iou(&CornerBox::new(0.0, 0.0, 2.0, 2.0), &CornerBox::new(1.0, 1.0, 2.0, 2.0)), 0.25, 1e-15));
        let empty = CornerBox::new(0.3, 0.3, 0.3, 0.3);
        assert_eq!(iou(&empty, &empty), 0.0);
    }

    #[test]
    fn giou_examples() {
        let a = CornerBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        assert!(close(giou(&a, &CornerBox::new(1.0, 1.0, 2.0, 2.0)), -0.5, 1e-15));
        assert!(close(giou(&CornerBox::new(0.0, 0.0, 2.0, 2.0), &CornerBox::new(1.0, 1.0, 2.0, 2.0)), 0.25, 1e-15));
    }

    #[test]
    fn clamping_enforces_min_side() {
        let b = BoundingBox::new(-0.2, 1.3, -0.5, 0.0).clamped();
        assert_eq!(b, BoundingBox::new(0.0, 1.0, MIN_SIDE, MIN_SIDE));
        assert!(b.is_valid());
        let nan = BoundingBox::new(f64::NAN, 0.5, f64::NAN, 0.5).clamped();
        assert!(nan.is_valid());
    }

    #[test]
    fn giou_gradient_matches_central_differences() {
        let mut r = rng::seeded(5);
        let step = 1e-6;
        for _ in 0..200 {
            let a = BoundingBox::new(r.random_range(0.2..0.8), r.random_range(0.2..0.8), r.random_range(0.05..0.5), r.random_range(0.05..0.5));
            let b = BoundingBox::new(r.random_range(0.2..0.8), r.random_range(0.2..0.8), r.random_range(0.05..0.5), r.random_range(0.05..0.5));
            let (v, g) = giou_with_grad(a, b);
            assert!(close(v, giou(&a.to_corners(), &b.to_corners()), 1e-14));
            for k in 0..4 {
                let mut hi = a.to_array();
                let mut lo = a.to_array();
                hi[k] += step;
                lo[k] -= step;
                let fd = (giou(&BoundingBox::from_array(hi).to_corners(), &b.to_corners())
                    - giou(&BoundingBox::from_array(lo).to_corners(), &b.to_corners()))
                    / (2.0 * step);
                assert!(close(fd, g[k], 1e-6 * (1.0 + fd.abs())), "component {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn nms_examples() {
        let a = CornerBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(nms(&[a, a], &[0.9, 0.8], 0.5), [0]);
        let b = CornerBox::new(2.0, 2.0, 3.0, 3.0);
        assert_eq!(nms(&[a, b], &[0.9, 0.8], 0.5), [0, 1]);
        // equal scores: lower index wins
        assert_eq!(nms(&[a, a], &[0.5, 0.5], 0.5), [0]);
        assert!(nms(&[], &[], 0.5).is_empty());
    }
}
