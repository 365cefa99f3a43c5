//! Projection consistency between 3D boxes and observed 2D boxes.

use crate::diffmath::Real;
use crate::fields::BoundBox;
use crate::geometry::{box_vertices_posed, project_vertex_generic, Box2D, CameraFrame};

use super::{LossError, LossWeights};

/// Huber threshold, in units of the image diagonal (coordinates are
/// diagonal-normalized before the Huber term so the threshold is scale-free).
pub const HUBER_DELTA: f64 = 1.0;

/// Tight axis-aligned 2D bounds `[x_min, y_min, x_max, y_max]` of the box's
/// 8 projected vertices, or `None` when any vertex falls behind the camera
/// (such frame/instance pairs are skipped by the loss).
pub fn projected_box2d<S: Real>(geom: &BoundBox<S>, frame: &CameraFrame) -> Option<[S; 4]> {
    let verts = box_vertices_posed(&geom.half, &geom.loc, geom.cos_yaw, geom.sin_yaw);
    let mut us = [None::<S>; 8];
    let mut vs = [None::<S>; 8];
    for (k, vert) in verts.into_iter().enumerate() {
        let (u, v) = project_vertex_generic(frame, vert)?;
        us[k] = Some(u);
        vs[k] = Some(v);
    }
    let fold = |vals: &[Option<S>; 8], take_max: bool| {
        let mut acc = vals[0].unwrap();
        for v in &vals[1..] {
            let v = v.unwrap();
            acc = if take_max { acc.max(v) } else { acc.min(v) };
        }
        acc
    };
    Some([
        fold(&us, false),
        fold(&vs, false),
        fold(&us, true),
        fold(&vs, true),
    ])
}

/// Distance-IoU of two `[x_min, y_min, x_max, y_max]` boxes: IoU minus the
/// squared center distance over the squared diagonal of the smallest
/// enclosing box. Mirrors the plain-number implementation exactly (the
/// degenerate branches decide on forward values and yield constants).
pub fn diou2d_generic<S: Real>(a: &[S; 4], b: &[S; 4]) -> S {
    let dx = a[2].max(b[2]) - a[0].min(b[0]);
    let dy = a[3].max(b[3]) - a[1].min(b[1]);
    let c2 = (dx * dx) + (dy * dy);
    if c2.val() <= 0.0 {
        return a[0].zero_like().add_c(1.0);
    }
    let ddx = (a[0] + a[2]).mul_c(0.5) - (b[0] + b[2]).mul_c(0.5);
    let ddy = (a[1] + a[3]).mul_c(0.5) - (b[1] + b[3]).mul_c(0.5);
    let rho2 = (ddx * ddx) + (ddy * ddy);

    let iw = (a[2].min(b[2]) - a[0].max(b[0])).relu();
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).relu();
    let inter = iw * ih;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = (area_a + area_b) - inter;
    let iou = if union.val() <= 0.0 {
        a[0].zero_like()
    } else {
        inter / union
    };
    iou - rho2 / c2
}

/// One (frame, instance) term: Huber on diagonal-normalized coordinate
/// differences, weighted by `alpha`, minus `beta` times the Distance-IoU.
fn pair_term<S: Real>(pred: &[S; 4], gt: &Box2D, frame: &CameraFrame, w: &LossWeights) -> S {
    let inv_diag = 1.0 / frame.diag();
    let g = gt.as_array();
    let mut huber_sum = pred[0]
        .add_c(-g[0])
        .mul_c(inv_diag)
        .huber(HUBER_DELTA);
    for k in 1..4 {
        huber_sum = huber_sum + pred[k].add_c(-g[k]).mul_c(inv_diag).huber(HUBER_DELTA);
    }
    let anchor = pred[0].zero_like();
    let gt_lifted = [
        anchor.add_c(g[0]),
        anchor.add_c(g[1]),
        anchor.add_c(g[2]),
        anchor.add_c(g[3]),
    ];
    let diou = diou2d_generic(pred, &gt_lifted);
    huber_sum.mul_c(w.alpha) + diou.mul_c(-w.beta)
}

/// Projection loss over all source frames and instances. `gt_boxes2d` is one
/// row per frame, one entry per instance (already reordered by the matching);
/// `None` entries and behind-camera projections contribute nothing.
pub fn projection_loss<S: Real>(
    boxes: &[BoundBox<S>],
    frames: &[CameraFrame],
    gt_boxes2d: &[Vec<Option<Box2D>>],
    w: &LossWeights,
) -> Result<S, LossError> {
    if frames.is_empty() {
        return Err(LossError::NoFrames);
    }
    if boxes.is_empty() {
        return Err(LossError::Shape("need at least one instance"));
    }
    if gt_boxes2d.len() != frames.len() {
        return Err(LossError::Shape("one ground-truth row per frame"));
    }
    if gt_boxes2d.iter().any(|row| row.len() != boxes.len()) {
        return Err(LossError::Shape("one ground-truth entry per instance"));
    }
    let mut acc: Option<S> = None;
    for (frame, row) in frames.iter().zip(gt_boxes2d) {
        for (geom, gt) in boxes.iter().zip(row) {
            let (Some(gt), Some(pred)) = (gt, projected_box2d(geom, frame)) else {
                continue;
            };
            let term = pair_term(&pred, gt, frame, w);
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
    }
    Ok(acc.unwrap_or_else(|| boxes[0].half[0].zero_like()))
}

/// Matching cost of one (box, ground-truth) pair on a single frame, or `None`
/// when the box projects behind the camera.
pub(crate) fn pairwise_cost(
    geom: &BoundBox<f64>,
    frame: &CameraFrame,
    gt: &Box2D,
    w: &LossWeights,
) -> Option<f64> {
    projected_box2d(geom, frame).map(|pred| pair_term(&pred, gt, frame, w))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::diffmath::Tape;
    use crate::geometry::{diou2d, enclosing_box2d, project_points, BoxParams, Mat3, Vec3};

    use super::*;

    fn test_camera(id: u32, eye: Vec3, target: Vec3) -> CameraFrame {
        let k = Mat3([[400.0, 0.0, 320.0], [0.0, 400.0, 240.0], [0.0, 0.0, 1.0]]);
        CameraFrame::look_at(id, eye, target, k, 640, 480)
    }

    fn rand_box2d(rng: &mut ChaCha8Rng) -> Box2D {
        let x = rng.gen_range(-20.0..600.0);
        let y = rng.gen_range(-20.0..440.0);
        Box2D::new(
            x,
            y,
            x + rng.gen_range(1.0..120.0),
            y + rng.gen_range(1.0..120.0),
        )
    }

    #[test]
    fn generic_diou_matches_plain_implementation_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..200 {
            let a = rand_box2d(&mut rng);
            let b = rand_box2d(&mut rng);
            assert_eq!(diou2d_generic(&a.as_array(), &b.as_array()), diou2d(&a, &b));
        }
        // Degenerate conventions survive the generic rewrite.
        let pt = Box2D::new(4.0, 4.0, 4.0, 4.0).as_array();
        assert_eq!(diou2d_generic(&pt, &pt), 1.0);
    }

    #[test]
    fn projected_box_matches_plain_projection_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let frame = test_camera(0, Vec3::new(0.0, -1.0, -8.0), Vec3::new(0.0, 0.0, 10.0));
        for _ in 0..50 {
            let b = BoxParams::new(
                [
                    rng.gen_range(0.8..3.0),
                    rng.gen_range(0.8..2.5),
                    rng.gen_range(1.0..5.0),
                ],
                [
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(6.0..30.0),
                ],
                rng.gen_range(-3.2..3.2),
            );
            let geom = BoundBox::from_params(&b);
            let got = projected_box2d(&geom, &frame).unwrap();
            let pts = project_points(&b.vertices(), &frame).unwrap();
            let want = enclosing_box2d(&pts);
            for (g, w) in got.iter().zip(want.as_array()) {
                assert!((g - w).abs() < 1e-9, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn perfect_projection_scores_minus_beta_per_term() {
        let frames = [
            test_camera(0, Vec3::new(-4.0, -1.0, -6.0), Vec3::new(0.0, 0.0, 12.0)),
            test_camera(1, Vec3::new(4.0, -2.0, -7.0), Vec3::new(0.0, 0.0, 12.0)),
            test_camera(2, Vec3::new(0.0, -3.0, -9.0), Vec3::new(0.0, 0.0, 12.0)),
        ];
        let boxes = [
            BoxParams::new([1.8, 1.5, 4.0], [-2.0, 0.0, 12.0], 0.3),
            BoxParams::new([1.6, 1.4, 3.6], [2.5, 0.0, 14.0], -0.8),
        ];
        let geoms: Vec<BoundBox<f64>> = boxes.iter().map(BoundBox::from_params).collect();
        // Ground truth produced by the same projection the loss uses.
        let gt: Vec<Vec<Option<Box2D>>> = frames
            .iter()
            .map(|f| {
                geoms
                    .iter()
                    .map(|g| {
                        let p = projected_box2d(g, f).unwrap();
                        Some(Box2D::new(p[0], p[1], p[2], p[3]))
                    })
                    .collect()
            })
            .collect();
        let w = LossWeights::default();
        let loss = projection_loss(&geoms, &frames, &gt, &w).unwrap();
        let want = -w.beta * frames.len() as f64 * boxes.len() as f64;
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");

        // Zero coefficients silence the loss entirely.
        let silent = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..w
        };
        assert_eq!(projection_loss(&geoms, &frames, &gt, &silent).unwrap(), 0.0);
    }

    #[test]
    fn loss_decreases_as_translation_error_shrinks() {
        let frame = test_camera(0, Vec3::new(1.0, -2.0, -8.0), Vec3::new(0.0, 0.0, 12.0));
        let truth = BoxParams::new([1.8, 1.5, 4.0], [0.0, 0.0, 12.0], 0.4);
        let gt_box = {
            let p = projected_box2d(&BoundBox::from_params(&truth), &frame).unwrap();
            Box2D::new(p[0], p[1], p[2], p[3])
        };
        let w = LossWeights::default();
        let mut last = f64::INFINITY;
        for step in 0..10 {
            // Offsets shrink from 2 m toward 0 along a fixed direction.
            let off = 2.0 * (1.0 - step as f64 / 10.0);
            let moved = BoxParams::new(truth.dim, [truth.loc[0] + off * 0.8, truth.loc[1], truth.loc[2] + off * 0.6], truth.yaw);
            let loss = projection_loss(
                &[BoundBox::from_params(&moved)],
                std::slice::from_ref(&frame),
                &[vec![Some(gt_box)]],
                &w,
            )
            .unwrap();
            assert!(loss < last, "step {step}: {loss} !< {last}");
            last = loss;
        }
    }

    #[test]
    fn behind_camera_terms_are_skipped() {
        let frame = test_camera(0, Vec3::ZERO, Vec3::new(0.0, 0.0, 10.0));
        let visible = BoxParams::new([1.0, 1.0, 2.0], [0.0, 0.0, 10.0], 0.0);
        let behind = BoxParams::new([1.0, 1.0, 2.0], [0.0, 0.0, -10.0], 0.0);
        let geoms = [
            BoundBox::from_params(&visible),
            BoundBox::from_params(&behind),
        ];
        let gt_vis = {
            let p = projected_box2d(&geoms[0], &frame).unwrap();
            Some(Box2D::new(p[0], p[1], p[2], p[3]))
        };
        let w = LossWeights::default();
        let gt = vec![vec![gt_vis, Some(Box2D::new(0.0, 0.0, 10.0, 10.0))]];
        let loss = projection_loss(&geoms, std::slice::from_ref(&frame), &gt, &w).unwrap();
        // Only the visible instance contributes: a perfect match.
        assert!((loss - -w.beta).abs() < 1e-12);

        // Everything behind: the loss is exactly zero (no terms).
        let only_behind = [BoundBox::from_params(&behind)];
        let gt1 = vec![vec![Some(Box2D::new(0.0, 0.0, 10.0, 10.0))]];
        let loss = projection_loss(&only_behind, std::slice::from_ref(&frame), &gt1, &w).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let frame = test_camera(0, Vec3::new(2.0, -2.0, -6.0), Vec3::new(0.0, 0.0, 12.0));
        let truth = BoxParams::new([1.7, 1.4, 3.8], [0.5, 0.2, 13.0], 0.5);
        let gt_box = {
            let p = projected_box2d(&BoundBox::from_params(&truth), &frame).unwrap();
            Box2D::new(p[0], p[1], p[2], p[3])
        };
        let w = LossWeights::default();
        let base = BoxParams::new([1.9, 1.3, 3.5], [0.9, 0.1, 12.4], 0.35);

        let eval = |b: &BoxParams| -> f64 {
            projection_loss(
                &[BoundBox::from_params(b)],
                std::slice::from_ref(&frame),
                &[vec![Some(gt_box)]],
                &w,
            )
            .unwrap()
        };

        let tape = Tape::new();
        let dim_v = base.dim.map(|v| tape.leaf(v));
        let loc_v = base.loc.map(|v| tape.leaf(v));
        let yaw_v = tape.leaf(base.yaw);
        let loss_v = projection_loss(
            &[BoundBox::new(dim_v, loc_v, yaw_v)],
            std::slice::from_ref(&frame),
            &[vec![Some(gt_box)]],
            &w,
        )
        .unwrap();
        let grads = tape.backward(loss_v).unwrap();

        let mut params = [0.0; 7];
        params[..3].copy_from_slice(&base.dim);
        params[3..6].copy_from_slice(&base.loc);
        params[6] = base.yaw;
        let h = 1e-6;
        for k in 0..7 {
            let mut plus = params;
            let mut minus = params;
            plus[k] += h;
            minus[k] -= h;
            let to_box = |q: [f64; 7]| BoxParams::new([q[0], q[1], q[2]], [q[3], q[4], q[5]], q[6]);
            let fd = (eval(&to_box(plus)) - eval(&to_box(minus))) / (2.0 * h);
            let ad = grads[k];
            assert!(
                (ad - fd).abs() / fd.abs().max(1e-6) <= 1e-3,
                "param {k}: ad {ad} vs fd {fd}"
            );
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let frame = test_camera(0, Vec3::ZERO, Vec3::new(0.0, 0.0, 10.0));
        let geoms = [BoundBox::from_params(&BoxParams::new(
            [1.0, 1.0, 2.0],
            [0.0, 0.0, 10.0],
            0.0,
        ))];
        let w = LossWeights::default();
        assert_eq!(
            projection_loss::<f64>(&geoms, &[], &[], &w),
            Err(LossError::NoFrames)
        );
        assert!(matches!(
            projection_loss::<f64>(&geoms, std::slice::from_ref(&frame), &[], &w),
            Err(LossError::Shape(_))
        ));
        assert!(matches!(
            projection_loss::<f64>(
                &geoms,
                std::slice::from_ref(&frame),
                &[vec![None, None]],
                &w
            ),
            Err(LossError::Shape(_))
        ));
    }
}
