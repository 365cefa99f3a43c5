//! Instance-aware silhouette rendering along single rays.

use crate::diffmath::Real;
use crate::fields::{BoundBox, BoundScene};
use crate::geometry::cuboid_sdf_posed;

use super::weights::softmin_blend;
use super::{
    Ray, RenderError, BLEND_PRUNE_TEMPERATURES, OPACITY_PRUNE_LOGITS, TRANSMITTANCE_FLOOR,
};

/// Render the soft instance labels a ray observes: entry `n < N` is the
/// probability mass instance `n` absorbs, entry `N` is the background.
///
/// `t_samples` must be strictly ascending positions along the ray (typically
/// from hierarchical sampling; they are plain numbers, so no gradients flow
/// into sample placement). Entries sum to 1: the background is defined as
/// `1 - sum(w_i)`, the transmittance remaining after all samples.
///
/// Cost control, exact to within one part in 1e14 of the unpruned result on
/// both scalar backends (pruning decisions read only forward values):
/// - Intervals whose *box-only* scene distance keeps `sharpness * f` above
///   `OPACITY_PRUNE_LOGITS` at both ends are skipped: the composed distance
///   is at least the box distance, so their opacity underflows f64 anyway.
/// - At a surviving sample, instances are evaluated nearest box first, and
///   evaluation stops once an instance's box-only distance exceeds the
///   nearest evaluated composed value by `BLEND_PRUNE_TEMPERATURES * tau`:
///   such instances cannot hold the scene minimum (the composed distance is
///   at least the box distance) and their blend share underflows.
/// - Integration stops once transmittance drops below `TRANSMITTANCE_FLOOR`;
///   everything behind an opaque surface is unreachable mass.
///
/// Field evaluations (the expensive part, with residual decoding) happen
/// only at samples adjacent to surviving intervals, and only for the
/// instances that matter there.
pub fn render_silhouette<S: Real>(
    ray: &Ray,
    scene: &BoundScene<S>,
    t_samples: &[f64],
    sharpness: f64,
    tau: f64,
) -> Result<Vec<S>, RenderError> {
    ray.validate()?;
    if t_samples.len() < 2 {
        return Err(RenderError::TooFewSamples {
            got: t_samples.len(),
        });
    }
    for (i, pair) in t_samples.windows(2).enumerate() {
        if !(pair[0] < pair[1]) {
            return Err(RenderError::NonAscendingT { index: i + 1 });
        }
    }
    if !(sharpness > 0.0) {
        return Err(RenderError::BadParam("sharpness must be positive"));
    }
    if !(tau > 0.0) {
        return Err(RenderError::BadParam("temperature must be positive"));
    }

    let n_inst = scene.len();
    let n_s = t_samples.len();

    // Plain-number snapshot of the box geometry for pruning decisions. The
    // composed per-instance distance is >= the box distance, so per-instance
    // box distances are valid lower bounds for the real ones.
    let boxes: Vec<BoundBox<f64>> = scene
        .instances()
        .iter()
        .map(|inst| BoundBox {
            half: inst.geom.half.map(Real::val),
            loc: inst.geom.loc.map(Real::val),
            cos_yaw: inst.geom.cos_yaw.val(),
            sin_yaw: inst.geom.sin_yaw.val(),
        })
        .collect();
    let points: Vec<[f64; 3]> = t_samples.iter().map(|&t| ray.point_at(t).to_array()).collect();
    // Row-major `n_s x n_inst` box distances and the per-sample minimum.
    let mut box_d = Vec::with_capacity(n_s * n_inst);
    let mut box_scene = Vec::with_capacity(n_s);
    for &p in &points {
        let mut min = f64::INFINITY;
        for b in &boxes {
            let d = cuboid_sdf_posed(p, &b.half, &b.loc, b.cos_yaw, b.sin_yaw);
            min = min.min(d);
            box_d.push(d);
        }
        box_scene.push(min);
    }

    let prune_dist = OPACITY_PRUNE_LOGITS / sharpness;
    let skip_margin = BLEND_PRUNE_TEMPERATURES * tau;
    // Lazily evaluated per-sample fields, stored in one arena: sample `idx`
    // owns `fields[start..start + len]` as `(instance, value)` pairs in
    // instance order, plus the minimum over them (equal to the full scene
    // minimum, since skipped instances are provably farther).
    let mut field_at: Vec<Option<(u32, u32, S)>> = vec![None; n_s];
    let mut fields: Vec<(u32, S)> = Vec::new();
    // Scratch for ordering instances by box distance and for blend inputs.
    let mut order: Vec<u32> = Vec::with_capacity(n_inst);
    let mut blend_in: Vec<S> = Vec::with_capacity(n_inst);
    let mut labels: Vec<Option<S>> = vec![None; n_inst];
    let mut sum_w: Option<S> = None;
    let mut trans: Option<S> = None; // None encodes exactly 1.
    let mut trans_val = 1.0f64;

    for i in 0..n_s - 1 {
        if trans_val < TRANSMITTANCE_FLOOR {
            break;
        }
        if box_scene[i].min(box_scene[i + 1]) > prune_dist {
            continue;
        }
        for idx in [i, i + 1] {
            if field_at[idx].is_none() {
                let row = &box_d[idx * n_inst..(idx + 1) * n_inst];
                order.clear();
                order.extend(0..n_inst as u32);
                order.sort_unstable_by(|&a, &b| {
                    row[a as usize].partial_cmp(&row[b as usize]).unwrap_or(std::cmp::Ordering::Equal)
                });
                let start = fields.len();
                let mut cur_min = f64::INFINITY;
                for &n in &order {
                    if row[n as usize] > cur_min + skip_margin {
                        break;
                    }
                    let f = scene.instance_sdf(n as usize, points[idx]);
                    cur_min = cur_min.min(f.val());
                    fields.push((n, f));
                }
                // Instance order, so min folding and blending below keep the
                // "ties go to the lowest index" convention.
                fields[start..].sort_unstable_by_key(|e| e.0);
                let mut min = fields[start].1;
                for e in &fields[start + 1..] {
                    min = min.min(e.1);
                }
                field_at[idx] = Some((start as u32, (fields.len() - start) as u32, min));
            }
        }
        let (entry_start, entry_len, f_entry) = field_at[i].unwrap();
        let f_exit = field_at[i + 1].unwrap().2;
        let alpha = f_entry.interval_alpha(f_exit, sharpness);
        let w = match trans {
            None => alpha,
            Some(t) => t * alpha,
        };

        let kept = &fields[entry_start as usize..(entry_start + entry_len) as usize];
        if let [(n, _)] = kept {
            // A single surviving instance absorbs the whole interval weight.
            let label = &mut labels[*n as usize];
            *label = Some(match label {
                None => w,
                Some(acc) => *acc + w,
            });
        } else {
            blend_in.clear();
            blend_in.extend(kept.iter().map(|e| e.1));
            let blend = softmin_blend(&blend_in, tau)?;
            for ((n, _), share) in kept.iter().zip(blend) {
                let label = &mut labels[*n as usize];
                *label = Some(match label {
                    None => w * share,
                    Some(acc) => acc.fma(w, share),
                });
            }
        }
        sum_w = Some(match sum_w {
            None => w,
            Some(acc) => acc + w,
        });
        trans = Some(match trans {
            None => alpha.c_sub(1.0),
            Some(t) => t.mul_one_minus(alpha),
        });
        trans_val = trans.unwrap().val();
    }

    // Anchor for exact zeros on the tape backend.
    let zero = scene.instances()[0].geom.half[0].zero_like();
    let background = match sum_w {
        None => zero.c_sub(1.0),
        // Clamp shields the [0,1] guarantee against the last-ulp case where
        // the sum rounds just above 1.
        Some(total) => total.c_sub(1.0).relu(),
    };
    let mut out: Vec<S> = labels
        .into_iter()
        .map(|l| l.unwrap_or(zero))
        .collect();
    out.push(background);
    Ok(out)
}
