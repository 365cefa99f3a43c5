//! Coarse-to-fine placement of sample points along rays.

use rand::Rng;

use crate::fields::BoundScene;
use crate::geometry::BoxParams;

use super::weights::density_weights;
use super::{Ray, RaySamples, RenderError};

/// Fallback threshold: a coarse weight sum at or below this is treated as "the
/// ray saw nothing", and fine samples revert to uniform.
const DEGENERATE_WEIGHT_SUM: f64 = 1e-12;

/// Place `n_coarse + n_fine` samples along the ray and evaluate the scene at
/// each: coarse samples are stratified-uniform over `[t_near, t_far]`, fine
/// samples are drawn by inverting the piecewise-linear CDF of the coarse
/// interval weights, so they cluster where the coarse pass found surface
/// crossings. Both passes read the same composed scene field; there is no
/// separate proposal network.
///
/// When the coarse weights are degenerate (the ray misses everything, or
/// sharpness is so low that no interval registers), fine samples fall back to
/// stratified-uniform placement.
///
/// The merged list is sorted with exact duplicates removed, so the result can
/// be slightly shorter than `n_coarse + n_fine`.
pub fn hierarchical_sample(
    ray: &Ray,
    scene: &BoundScene<f64>,
    sharpness: f64,
    n_coarse: usize,
    n_fine: usize,
    rng: &mut impl Rng,
) -> Result<RaySamples, RenderError> {
    ray.validate()?;
    if n_coarse < 2 {
        return Err(RenderError::BadParam("need at least two coarse samples"));
    }
    if !(sharpness > 0.0) {
        return Err(RenderError::BadParam("sharpness must be positive"));
    }

    let coarse = stratified(ray.t_near, ray.t_far, n_coarse, rng);
    let coarse_sdf: Vec<f64> = coarse
        .iter()
        .map(|&t| scene.scene_sdf(ray.point_at(t).to_array()))
        .collect();
    let w = density_weights(&coarse_sdf, sharpness)?;
    let wsum: f64 = w.iter().sum();

    let mut merged = coarse.clone();
    if wsum <= DEGENERATE_WEIGHT_SUM {
        merged.extend(stratified(ray.t_near, ray.t_far, n_fine, rng));
    } else {
        // Piecewise-linear CDF over the coarse intervals; the last knot is
        // pinned to exactly 1 so every u in [0,1) lands in some segment.
        let mut cdf = Vec::with_capacity(n_coarse);
        cdf.push(0.0);
        let mut acc = 0.0;
        for &wi in &w {
            acc += wi / wsum;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;

        for j in 0..n_fine {
            let u = (j as f64 + rng.gen::<f64>()) / n_fine as f64;
            // Last knot <= u; the following knot is strictly above u, so the
            // bracketing segment always exists.
            let k = cdf.partition_point(|&c| c <= u) - 1;
            let span = cdf[k + 1] - cdf[k];
            let frac = if span > 0.0 { (u - cdf[k]) / span } else { 0.0 };
            merged.push(coarse[k] + frac * (coarse[k + 1] - coarse[k]));
        }
    }

    merged.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    merged.dedup();

    let n_inst = scene.len();
    let mut scene_col = Vec::with_capacity(merged.len());
    let mut inst_col = Vec::with_capacity(merged.len() * n_inst);
    for &t in &merged {
        let p = ray.point_at(t).to_array();
        let mut min = f64::INFINITY;
        for n in 0..n_inst {
            let f = scene.instance_sdf(n, p);
            min = min.min(f);
            inst_col.push(f);
        }
        scene_col.push(min);
    }
    RaySamples::new(merged, scene_col, inst_col, n_inst)
}

/// One jittered sample per stratum of `[lo, hi]` split into `n` equal strata;
/// strictly ascending by construction.
fn stratified(lo: f64, hi: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let step = (hi - lo) / n as f64;
    (0..n)
        .map(|k| lo + step * (k as f64 + rng.gen::<f64>()))
        .collect()
}

/// Restrict a ray's `[t_near, t_far]` range to the union of its intersections
/// with the given boxes, each grown by `dilation` meters on every side (to
/// keep the soft-density tails around surfaces inside the range). Returns
/// `None` when the ray misses every dilated box, meaning it can be rendered
/// as pure background without sampling.
pub fn tighten_ray_bounds(ray: &Ray, boxes: &[BoxParams], dilation: f64) -> Option<(f64, f64)> {
    debug_assert!(dilation >= 0.0, "dilation must be non-negative");
    let grow = 2.0 * dilation.max(0.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for b in boxes {
        let dilated = BoxParams::new(
            [b.dim[0] + grow, b.dim[1] + grow, b.dim[2] + grow],
            b.loc,
            b.yaw,
        );
        if let Some((t0, t1)) = dilated.ray_intersect(ray.origin, ray.dir) {
            lo = lo.min(t0);
            hi = hi.max(t1);
        }
    }
    let lo = lo.max(ray.t_near);
    let hi = hi.min(ray.t_far);
    (lo < hi).then_some((lo, hi))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::fields::{BoundBox, BoundInstance};
    use crate::geometry::Vec3;

    use super::*;

    fn boxes_scene(boxes: &[BoxParams]) -> BoundScene<f64> {
        BoundScene::new(
            boxes
                .iter()
                .map(|b| BoundInstance {
                    geom: BoundBox::from_params(b),
                    phi: None,
                })
                .collect(),
            None,
        )
        .unwrap()
    }

    fn ray_toward(origin: Vec3, toward: Vec3, n_inst: usize, t_far: f64) -> Ray {
        let mut label = vec![0.0; n_inst + 1];
        label[n_inst] = 1.0;
        Ray::new(origin, (toward - origin).normalized(), 0.1, t_far, label)
    }

    #[test]
    fn degenerate_weights_fall_back_to_uniform() {
        // Box far off to the side: every coarse weight underflows to zero.
        let scene = boxes_scene(&[BoxParams::new([1.0, 1.0, 1.0], [500.0, 0.0, 10.0], 0.0)]);
        let ray = ray_toward(Vec3::ZERO, Vec3::new(0.0, 0.0, 10.0), 1, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let s = hierarchical_sample(&ray, &scene, 50.0, 100, 100, &mut rng).unwrap();
        assert_eq!(s.len(), 200, "no duplicates expected from jittered strata");

        // Uniform coverage: with one coarse and one fine sample per stratum,
        // consecutive gaps can never exceed two stratum widths.
        let step = (ray.t_far - ray.t_near) / 100.0;
        let max_gap = s
            .t()
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(0.0f64, f64::max);
        assert!(max_gap < 2.0 * step, "gap {max_gap} vs stratum {step}");
    }

    #[test]
    fn fine_samples_cluster_at_the_surface_crossing() {
        let b = BoxParams::new([2.0, 2.0, 4.0], [0.0, 0.0, 15.0], 0.3);
        let scene = boxes_scene(&[b]);
        let ray = ray_toward(Vec3::ZERO, b.center(), 1, 30.0);
        // Independent location of the entry crossing: exact slab test.
        let (t_entry, _) = b.ray_intersect(ray.origin, ray.dir).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for round in 0..5 {
            let n_coarse = 100;
            let s = hierarchical_sample(&ray, &scene, 150.0, n_coarse, 100, &mut rng).unwrap();

            // Reconstruct the coarse stratum boundaries around the crossing.
            // The coarse sample in stratum k lies in
            // [t_near + k*step, t_near + (k+1)*step), so the crossing interval
            // is pinned down to one stratum pair without knowing the jitter.
            let step = (ray.t_far - ray.t_near) / n_coarse as f64;
            let k = ((t_entry - ray.t_near) / step).floor() as usize;
            let lo = ray.t_near + (k as f64 - 1.0) * step;
            let hi = ray.t_near + (k + 2) as f64 * step;
            let inside = s.t().iter().filter(|&&t| t > lo && t < hi).count();
            // The window spans at most 3 strata, so at most 3 coarse samples
            // sit inside it; the rest are fine samples.
            assert!(
                inside.saturating_sub(3) >= 60,
                "round {round}: {inside} samples near the crossing"
            );
        }
    }

    #[test]
    fn merged_samples_are_ascending_and_seed_deterministic() {
        let boxes = [
            BoxParams::new([1.5, 1.5, 3.0], [1.0, 0.0, 8.0], 0.4),
            BoxParams::new([2.0, 1.8, 4.0], [-2.0, 0.0, 14.0], -0.7),
        ];
        let scene = boxes_scene(&boxes);
        let ray = ray_toward(Vec3::ZERO, Vec3::new(0.0, 0.0, 12.0), 2, 40.0);

        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            hierarchical_sample(&ray, &scene, 80.0, 100, 100, &mut rng).unwrap()
        };
        let a = run(7);
        let b = run(7);
        let c = run(8);
        assert_eq!(a, b, "same seed must reproduce bitwise");
        assert_ne!(a.t(), c.t(), "different seed should move samples");
        assert!(a.len() <= 200 && a.len() > 100);
        for pair in a.t().windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn stored_columns_match_direct_field_evaluation() {
        let boxes = [
            BoxParams::new([1.0, 1.0, 2.0], [0.5, 0.0, 6.0], 0.2),
            BoxParams::new([2.0, 2.0, 2.0], [-0.5, 0.3, 11.0], 1.1),
        ];
        let scene = boxes_scene(&boxes);
        let ray = ray_toward(Vec3::ZERO, Vec3::new(0.0, 0.0, 9.0), 2, 25.0);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let s = hierarchical_sample(&ray, &scene, 60.0, 50, 50, &mut rng).unwrap();
        assert_eq!(s.n_instances(), 2);
        for (i, &t) in s.t().iter().enumerate() {
            let p = ray.point_at(t).to_array();
            let row = s.instance_sdf_at(i);
            for n in 0..2 {
                assert_eq!(row[n], scene.instance_sdf(n, p));
            }
            assert_eq!(s.scene_sdf()[i], scene.scene_sdf(p));
        }
    }

    #[test]
    fn ray_bounds_tighten_to_dilated_boxes() {
        let b = BoxParams::new([2.0, 2.0, 4.0], [0.0, 0.0, 20.0], 0.0);
        let ray = ray_toward(Vec3::ZERO, b.center(), 1, 100.0);
        let (t0, t1) = b.ray_intersect(ray.origin, ray.dir).unwrap();

        let (lo, hi) = tighten_ray_bounds(&ray, &[b], 0.5).unwrap();
        assert!((lo - (t0 - 0.5)).abs() < 1e-12);
        assert!((hi - (t1 + 0.5)).abs() < 1e-12);

        // Clipping to the ray's own range.
        let short = Ray::new(ray.origin, ray.dir, 0.1, 19.0, ray.gt_label.clone());
        let (_, hi_clipped) = tighten_ray_bounds(&short, &[b], 0.5).unwrap();
        assert_eq!(hi_clipped, 19.0);

        // A miss yields no bounds at all.
        let away = ray_toward(Vec3::ZERO, Vec3::new(0.0, 50.0, 1.0), 1, 100.0);
        assert_eq!(tighten_ray_bounds(&away, &[b], 0.5), None);

        // Union over boxes spans from the first entry to the last exit.
        let far = BoxParams::new([2.0, 2.0, 2.0], [0.0, 0.0, 40.0], 0.0);
        let (ulo, uhi) = tighten_ray_bounds(&ray, &[b, far], 0.0).unwrap();
        assert!((ulo - t0).abs() < 1e-12);
        assert!(uhi > 39.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let scene = boxes_scene(&[BoxParams::new([1.0, 1.0, 1.0], [0.0, 0.0, 5.0], 0.0)]);
        let ray = ray_toward(Vec3::ZERO, Vec3::new(0.0, 0.0, 5.0), 1, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            hierarchical_sample(&ray, &scene, 50.0, 1, 10, &mut rng),
            Err(RenderError::BadParam(_))
        ));
        assert!(matches!(
            hierarchical_sample(&ray, &scene, 0.0, 10, 10, &mut rng),
            Err(RenderError::BadParam(_))
        ));
    }
}
