//! Signed distance to simple 2D polygons.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolygonError {
    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    Degenerate(usize),
}

/// Signed distance from `p` to the polygon boundary: negative inside,
/// positive outside (even-odd rule), magnitude the distance to the nearest
/// edge. Vertices may repeat consecutively; fewer than 3 distinct vertices is
/// an error.
pub fn polygon_sdf2d(p: [f64; 2], poly: &[[f64; 2]]) -> Result<f64, PolygonError> {
    let distinct = {
        let mut seen: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
        for v in poly {
            if !seen.iter().any(|s| s == v) {
                seen.push(*v);
            }
        }
        seen.len()
    };
    if distinct < 3 {
        return Err(PolygonError::Degenerate(distinct));
    }

    let mut dist2 = f64::INFINITY;
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        dist2 = dist2.min(point_segment_dist2(p, a, b));
        // Even-odd crossing test against the horizontal ray toward +x.
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_int = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x_int {
                inside = !inside;
            }
        }
    }
    let d = dist2.sqrt();
    Ok(if inside { -d } else { d })
}

fn point_segment_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    dx * dx + dy * dy
}
