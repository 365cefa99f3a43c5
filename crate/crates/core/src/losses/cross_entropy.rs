//! Cross entropy between rendered and observed per-ray instance labels.

use crate::diffmath::Real;

use super::LossError;

/// Floor applied inside the logarithm so fully transparent or fully occluded
/// predictions produce a large-but-finite penalty instead of infinity.
pub const CE_EPS: f64 = 1e-7;

/// Summed cross entropy over rays: `Σ_rays −Σ_c gt_c · ln(max(Ŝ_c, ε))`.
///
/// Labels are per-ray probability vectors over N instances plus background
/// (one-hot in practice); each must have the same length as the rendered
/// vector for its ray. The sum is over rays, not averaged, so the magnitude
/// scales with the ray budget.
pub fn silhouette_loss<S: Real>(
    rendered: &[Vec<S>],
    gt_labels: &[&[f64]],
) -> Result<S, LossError> {
    if rendered.len() != gt_labels.len() {
        return Err(LossError::Shape("one label per rendered ray"));
    }
    if rendered.is_empty() {
        return Err(LossError::Shape("need at least one ray"));
    }
    let mut acc: Option<S> = None;
    for (pred, gt) in rendered.iter().zip(gt_labels) {
        if pred.len() != gt.len() {
            return Err(LossError::Shape(
                "rendered and label class counts differ",
            ));
        }
        for (p, &g) in pred.iter().zip(*gt) {
            if g == 0.0 {
                // The term g·ln(clamped p) is exactly zero: skipping it keeps
                // the sum identical and the graph small.
                continue;
            }
            let term = p.max_c(CE_EPS).ln().mul_c(-g);
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
    }
    acc.ok_or(LossError::Shape("labels assign no probability mass"))
}
