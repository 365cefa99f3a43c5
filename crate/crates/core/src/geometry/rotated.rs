//! Rotated-box overlap in the bird's-eye view and in 3D.

use super::box3d::BoxParams;

/// `(iou_bev, iou_3d)` between two upright yawed boxes. The BEV intersection
/// is computed exactly by convex polygon clipping; the 3D intersection
/// multiplies it by the vertical overlap.
pub fn bev_iou3d(a: &BoxParams, b: &BoxParams) -> (f64, f64) {
    let pa = a.bev_corners().to_vec();
    let pb = b.bev_corners();
    let inter_poly = clip_convex(pa, &pb);
    let inter_area = poly_area(&inter_poly);

    let area_a = a.dim[0] * a.dim[2];
    let area_b = b.dim[0] * b.dim[2];
    let union_area = area_a + area_b - inter_area;
    let iou_bev = if union_area > 0.0 {
        inter_area / union_area
    } else {
        0.0
    };

    let a_lo = a.loc[1] - a.dim[1] * 0.5;
    let a_hi = a.loc[1] + a.dim[1] * 0.5;
    let b_lo = b.loc[1] - b.dim[1] * 0.5;
    let b_hi = b.loc[1] + b.dim[1] * 0.5;
    let h_overlap = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);

    let inter_vol = inter_area * h_overlap;
    let vol_a = area_a * a.dim[1];
    let vol_b = area_b * b.dim[1];
    let union_vol = vol_a + vol_b - inter_vol;
    let iou_3d = if union_vol > 0.0 {
        inter_vol / union_vol
    } else {
        0.0
    };
    (iou_bev, iou_3d)
}

/// Sutherland–Hodgman clip of a convex `subject` polygon by a convex,
/// counter-clockwise `clip` quad.
fn clip_convex(subject: Vec<[f64; 2]>, clip: &[[f64; 2]; 4]) -> Vec<[f64; 2]> {
    let mut poly = subject;
    for i in 0..4 {
        if poly.is_empty() {
            return poly;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % 4];
        let keep_side = |p: [f64; 2]| (e1[0] - e0[0]) * (p[1] - e0[1]) - (e1[1] - e0[1]) * (p[0] - e0[0]);
        let mut out = Vec::with_capacity(poly.len() + 2);
        for j in 0..poly.len() {
            let cur = poly[j];
            let prev = poly[(j + poly.len() - 1) % poly.len()];
            let side_cur = keep_side(cur);
            let side_prev = keep_side(prev);
            if side_cur >= 0.0 {
                if side_prev < 0.0 {
                    out.push(line_intersection(prev, cur, e0, e1));
                }
                out.push(cur);
            } else if side_prev >= 0.0 {
                out.push(line_intersection(prev, cur, e0, e1));
            }
        }
        poly = out;
    }
    poly
}

fn line_intersection(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> [f64; 2] {
    let d1 = [a1[0] - a0[0], a1[1] - a0[1]];
    let d2 = [b1[0] - b0[0], b1[1] - b0[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    debug_assert!(denom.abs() > 0.0, "clipping parallel edge");
    let t = ((b0[0] - a0[0]) * d2[1] - (b0[1] - a0[1]) * d2[0]) / denom;
    [a0[0] + t * d1[0], a0[1] + t * d1[1]]
}

fn poly_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let [x0, y0] = poly[i];
            let [x1, y1] = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    0.5 * twice.abs()
}
