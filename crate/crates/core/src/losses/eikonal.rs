//! Distance-likeness regularization of the composed scene field.

use crate::diffmath::Real;
use crate::fields::BoundScene;

use super::LossError;

/// Step for the central-difference spatial gradient, meters.
pub const EIKONAL_H: f64 = 1e-3;

/// Points farther than this from the nearest surface are not regularized.
pub const NEAR_SURFACE_BAND: f64 = 2.0;

/// Upper bound on regularized points per iteration.
pub const EIKONAL_MAX_POINTS: usize = 512;

/// Mean of `(‖∇f‖ − 1)²` over the points, with the spatial gradient taken by
/// central differences of an arbitrary field; `None` for an empty point set.
///
/// The finite difference is in *space* only — each field evaluation stays on
/// the autodiff tape, so the penalty is differentiable in the field's
/// parameters without building second-order graphs.
pub fn eikonal_reg_with<S: Real>(
    points: &[[f64; 3]],
    mut field: impl FnMut([f64; 3]) -> S,
    h: f64,
) -> Option<S> {
    assert!(h > 0.0, "step must be positive");
    if points.is_empty() {
        return None;
    }
    let inv_2h = 1.0 / (2.0 * h);
    let mut acc: Option<S> = None;
    for &p in points {
        let diff = |k: usize, field: &mut dyn FnMut([f64; 3]) -> S| {
            let mut plus = p;
            let mut minus = p;
            plus[k] += h;
            minus[k] -= h;
            (field(plus) - field(minus)).mul_c(inv_2h)
        };
        let gx = diff(0, &mut field);
        let gy = diff(1, &mut field);
        let gz = diff(2, &mut field);
        let dev = S::norm3(gx, gy, gz).add_c(-1.0);
        let sq = dev * dev;
        acc = Some(match acc {
            None => sq,
            Some(a) => a + sq,
        });
    }
    Some(acc.unwrap().mul_c(1.0 / points.len() as f64))
}

/// Eikonal penalty of the composed scene field at the given points; zero for
/// an empty point set.
pub fn eikonal_reg<S: Real>(points: &[[f64; 3]], scene: &BoundScene<S>) -> S {
    eikonal_reg_with(points, |p| scene.scene_sdf(p), EIKONAL_H)
        .unwrap_or_else(|| scene.instances()[0].geom.half[0].zero_like())
}

/// Pick regularization points from this batch's ray samples: keep points
/// with `|scene distance| < band`, then thin evenly (keeping relative order)
/// to at most `cap` points. Deterministic.
pub fn select_near_surface(
    points: &[[f64; 3]],
    scene_sdf: &[f64],
    band: f64,
    cap: usize,
) -> Result<Vec<[f64; 3]>, LossError> {
    if points.len() != scene_sdf.len() {
        return Err(LossError::Shape("one distance per candidate point"));
    }
    let near: Vec<[f64; 3]> = points
        .iter()
        .zip(scene_sdf)
        .filter(|(_, &f)| f.abs() < band)
        .map(|(&p, _)| p)
        .collect();
    if near.len() <= cap || cap == 0 {
        return Ok(if cap == 0 { Vec::new() } else { near });
    }
    Ok((0..cap).map(|k| near[k * near.len() / cap]).collect())
}
