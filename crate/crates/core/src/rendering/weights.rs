//! Opacity weights along a ray and instance blending at a point.

use crate::diffmath::Real;

use super::RenderError;

/// Discrete opacity weights for samples along one ray.
///
/// For signed distances `f_i` at ascending sample positions, interval `i`
/// gets opacity `alpha_i = max((phi(f_i) - phi(f_{i+1})) / phi(f_i), 0)` with
/// `phi(x) = sigmoid(sharpness * x)` (computed in log space, see
/// [`Real::interval_alpha`]), and weight `w_i = alpha_i * prod_{j<i} (1 -
/// alpha_j)`. The returned vector has one weight per interval, i.e.
/// `sdf.len() - 1` entries; weight `i` belongs to sample `i`, the interval's
/// near end.
///
/// Every weight lies in `[0, 1]` and the weights sum to at most 1; the
/// deficit `1 - sum(w)` is the transmittance left after the last sample,
/// which the renderer assigns to the background.
pub fn density_weights<S: Real>(sdf: &[S], sharpness: f64) -> Result<Vec<S>, RenderError> {
    if sdf.len() < 2 {
        return Err(RenderError::TooFewSamples { got: sdf.len() });
    }
    if !(sharpness > 0.0) {
        return Err(RenderError::BadParam("sharpness must be positive"));
    }
    let mut weights = Vec::with_capacity(sdf.len() - 1);
    // `None` encodes transmittance exactly 1, so the first interval costs no
    // multiplication on either backend.
    let mut trans: Option<S> = None;
    for i in 0..sdf.len() - 1 {
        let alpha = sdf[i].interval_alpha(sdf[i + 1], sharpness);
        weights.push(match trans {
            None => alpha,
            Some(t) => t * alpha,
        });
        trans = Some(match trans {
            None => alpha.c_sub(1.0),
            Some(t) => t.mul_one_minus(alpha),
        });
    }
    Ok(weights)
}

/// Relative-proximity weights of `N` instance distances at one point:
/// softmin `exp(-f_n / tau) / sum_m exp(-f_m / tau)`.
///
/// Components are positive and sum to 1. Internally the exponents are
/// shifted by the (detached) minimum before exponentiation; the shift
/// cancels in the ratio, so values and gradients are those of the unshifted
/// formula while overflow is impossible.
pub fn softmin_blend<S: Real>(sdfs: &[S], tau: f64) -> Result<Vec<S>, RenderError> {
    if sdfs.is_empty() {
        return Err(RenderError::BadParam("softmin needs at least one instance"));
    }
    if !(tau > 0.0) {
        return Err(RenderError::BadParam("temperature must be positive"));
    }
    let shift = sdfs
        .iter()
        .map(|s| s.val())
        .fold(f64::INFINITY, f64::min);
    let k = -1.0 / tau;
    let exps: Vec<S> = sdfs.iter().map(|f| f.exp_affine(k, shift / tau)).collect();
    let mut total = exps[0];
    for e in &exps[1..] {
        total = total + *e;
    }
    Ok(exps.into_iter().map(|e| e / total).collect())
}
