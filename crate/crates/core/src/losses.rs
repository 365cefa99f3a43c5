//! Loss terms driving the box optimization, and the bipartite matching that
//! pairs optimized boxes with 2D annotations.
//!
//! Three terms combine into the total objective:
//! - projection: projected 3D boxes must agree with observed 2D boxes across
//!   source frames (Huber on normalized coordinates, minus a Distance-IoU
//!   reward) — this keeps boxes tight;
//! - silhouette: rendered per-ray instance labels must match the observed
//!   instance masks (cross entropy) — this carves the shape;
//! - eikonal: the composed scene field should stay distance-like (unit
//!   spatial gradient) near surfaces.
//!
//! Matching runs on the target frame only; ground truth is assumed reordered
//! by the resulting permutation before any loss is computed.

use thiserror::Error;

pub mod cross_entropy;
pub mod eikonal;
pub mod matching;
pub mod projection;

pub use cross_entropy::silhouette_loss;
pub use eikonal::{eikonal_reg, eikonal_reg_with, select_near_surface};
pub use matching::{hungarian_match, match_boxes_to_gt, MatchOutcome, Matching};
pub use projection::{diou2d_generic, projected_box2d, projection_loss};

use crate::diffmath::Real;

/// Balancing coefficients of the objective. `alpha`/`beta` weight the Huber
/// and Distance-IoU parts inside the projection term; the `lambda_*` weights
/// combine the three top-level terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_proj: f64,
    pub lambda_slh: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            lambda_proj: 1.0,
            lambda_slh: 1.0,
            lambda_reg: 0.01,
        }
    }
}

impl LossWeights {
    /// All coefficients must be non-negative (zero disables a term).
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.alpha,
            self.beta,
            self.lambda_proj,
            self.lambda_slh,
            self.lambda_reg,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(LossError::Shape("loss weights must be non-negative"))
        }
    }
}

/// Errors from loss assembly and matching.
#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    /// The projection loss needs at least one source frame.
    #[error("no source frames")]
    NoFrames,
    /// Input collections disagree in shape.
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    /// A cost matrix entry was not finite.
    #[error("cost matrix entries must be finite")]
    NonFiniteCost,
}

/// Weighted sum of the three loss terms; exactly linear in the weights.
pub fn total_loss<S: Real>(l_proj: S, l_slh: S, l_reg: S, w: &LossWeights) -> S {
    l_proj.mul_c(w.lambda_proj) + l_slh.mul_c(w.lambda_slh) + l_reg.mul_c(w.lambda_reg)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn default_weights_match_the_published_configuration() {
        let w = LossWeights::default();
        assert_eq!(
            (w.alpha, w.beta, w.lambda_proj, w.lambda_slh, w.lambda_reg),
            (1.0, 0.1, 1.0, 1.0, 0.01)
        );
        assert!(w.validate().is_ok());
        assert!(LossWeights {
            alpha: -1.0,
            ..w
        }
        .validate()
        .is_err());
    }

    #[test]
    fn total_loss_trivial_cases() {
        let zeroed = LossWeights {
            alpha: 1.0,
            beta: 0.1,
            lambda_proj: 0.0,
            lambda_slh: 0.0,
            lambda_reg: 0.0,
        };
        assert_eq!(total_loss(3.7, -1.2, 9.9, &zeroed), 0.0);

        let proj_only = LossWeights {
            lambda_proj: 1.0,
            lambda_slh: 0.0,
            lambda_reg: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_loss(3.7, -1.2, 9.9, &proj_only), 3.7);

        // Unit component losses under the default weights.
        assert_eq!(total_loss(1.0, 1.0, 1.0, &LossWeights::default()), 2.01);
    }

    #[test]
    fn total_loss_is_linear_in_the_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..50 {
            let (a, b, c) = (
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let w1 = LossWeights {
                alpha: 1.0,
                beta: 0.1,
                lambda_proj: rng.gen_range(0.0..3.0),
                lambda_slh: rng.gen_range(0.0..3.0),
                lambda_reg: rng.gen_range(0.0..3.0),
            };
            let k = rng.gen_range(0.0..4.0);
            let wk = LossWeights {
                lambda_proj: k * w1.lambda_proj,
                lambda_slh: k * w1.lambda_slh,
                lambda_reg: k * w1.lambda_reg,
                ..w1
            };
            let direct = total_loss(a, b, c, &wk);
            let scaled = a * (k * w1.lambda_proj) + b * (k * w1.lambda_slh) + c * (k * w1.lambda_reg);
            assert_eq!(direct, scaled);
        }
    }
}
