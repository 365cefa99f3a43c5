//! Axis-aligned 2D boxes: IoU, Distance-IoU, Huber, vertex enclosure.

/// Axis-aligned box in pixel coordinates; `min <= max` componentwise.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max, "inverted box");
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }

    /// Clip to another box (used to crop projected boxes to image bounds).
    pub fn intersect(&self, o: &Box2D) -> Option<Box2D> {
        let x0 = self.x_min.max(o.x_min);
        let y0 = self.y_min.max(o.y_min);
        let x1 = self.x_max.min(o.x_max);
        let y1 = self.y_max.min(o.y_max);
        (x0 <= x1 && y0 <= y1).then(|| Box2D::new(x0, y0, x1, y1))
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Tight axis-aligned bounds of a point set.
pub fn enclosing_box2d(pts: &[[f64; 2]]) -> Box2D {
    assert!(!pts.is_empty(), "need at least one point");
    let mut b = Box2D::new(pts[0][0], pts[0][1], pts[0][0], pts[0][1]);
    for p in &pts[1..] {
        b.x_min = b.x_min.min(p[0]);
        b.y_min = b.y_min.min(p[1]);
        b.x_max = b.x_max.max(p[0]);
        b.y_max = b.y_max.max(p[1]);
    }
    b
}

/// Intersection-over-union; 0 for disjoint boxes and, by convention, when
/// the union has zero area.
pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Distance-IoU: IoU minus the squared center distance over the squared
/// diagonal of the smallest box enclosing both. Two degenerate boxes at the
/// same point give 1 by convention.
pub fn diou2d(a: &Box2D, b: &Box2D) -> f64 {
    let ex_min = a.x_min.min(b.x_min);
    let ey_min = a.y_min.min(b.y_min);
    let ex_max = a.x_max.max(b.x_max);
    let ey_max = a.y_max.max(b.y_max);
    let c2 = (ex_max - ex_min).powi(2) + (ey_max - ey_min).powi(2);
    if c2 <= 0.0 {
        return 1.0;
    }
    let ca = a.center();
    let cb = b.center();
    let rho2 = (ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2);
    iou2d(a, b) - rho2 / c2
}

/// Summed elementwise Huber penalty: quadratic inside `delta`, linear
/// outside.
pub fn huber(xs: &[f64], delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    xs.iter()
        .map(|&x| crate::diffmath::Real::huber(x, delta))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enclosing_box_examples() {
        let b = enclosing_box2d(&[[0.0, 0.0], [2.0, 3.0]]);
        assert_eq!(b, Box2D::new(0.0, 0.0, 2.0, 3.0));
        let degenerate = enclosing_box2d(&[[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(degenerate.area(), 0.0);
    }

    #[test]
    fn enclosing_box_matches_scan_oracle_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let pts: Vec<[f64; 2]> = (0..8)
                .map(|_| [rng.gen_range(-30.0..90.0), rng.gen_range(-10.0..60.0)])
                .collect();
            let b = enclosing_box2d(&pts);
            let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
            assert_eq!(b.x_min, xs.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(b.x_max, xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            assert_eq!(b.y_min, ys.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(b.y_max, ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            // Idempotent: enclosing the box's own corners returns the box.
            let again = enclosing_box2d(&[
                [b.x_min, b.y_min],
                [b.x_max, b.y_max],
            ]);
            assert_eq!(again, b);
        }
    }

    #[test]
    fn iou_examples() {
        let a = Box2D::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou2d(&a, &a), 1.0);
        let disjoint = Box2D::new(5.0, 5.0, 6.0, 6.0);
        assert_eq!(iou2d(&a, &disjoint), 0.0);
        let b = Box2D::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou2d(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        // Symmetry.
        assert_eq!(iou2d(&a, &b), iou2d(&b, &a));
        // Zero-union convention.
        let pt = Box2D::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou2d(&pt, &pt), 0.0);
    }

    #[test]
    fn diou_examples() {
        let a = Box2D::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(diou2d(&a, &a), 1.0);
        let b = Box2D::new(1.0, 1.0, 3.0, 3.0);
        let want = 1.0 / 7.0 - 2.0 / 18.0;
        assert!((diou2d(&a, &b) - want).abs() < 1e-15);
        assert!((want - 2.0 / 63.0).abs() < 1e-15);
        let far = Box2D::new(100.0, 0.0, 101.0, 1.0);
        let unit = Box2D::new(0.0, 0.0, 1.0, 1.0);
        assert!(diou2d(&unit, &far) < 0.0);
        let pt = Box2D::new(4.0, 4.0, 4.0, 4.0);
        assert_eq!(diou2d(&pt, &pt), 1.0);
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(&[0.0], 1.0), 0.0);
        let d = 0.7;
        assert!((huber(&[d], d) - d * d / 2.0).abs() < 1e-15);
        assert!((huber(&[2.0 * d], d) - 1.5 * d * d).abs() < 1e-15);
        // Summed over components.
        assert!((huber(&[d, -2.0 * d], d) - (d * d / 2.0 + 1.5 * d * d)).abs() < 1e-15);
    }
}
