//! Differentiable silhouette rendering along camera rays.
//!
//! A ray marches through the scene's composed signed-distance field. Each
//! sample interval contributes an opacity derived from how the scaled SDF
//! changes across it ([`weights::density_weights`]); interval weights times
//! per-instance soft assignments ([`weights::softmin_blend`]) integrate into a
//! per-ray probability vector over instances plus background
//! ([`silhouette::render_silhouette`]). Sample placement itself comes from a
//! coarse-to-fine inverse-CDF scheme ([`sampling::hierarchical_sample`]).
//!
//! The renderer is generic over the scalar backend: plain numbers for
//! sampling and diagnostics, tape variables when gradients are needed.

use thiserror::Error;

use crate::geometry::Vec3;

pub mod sampling;
pub mod silhouette;
pub mod weights;

pub use sampling::{hierarchical_sample, tighten_ray_bounds};
pub use silhouette::render_silhouette;
pub use weights::{density_weights, softmin_blend};

/// Intervals with a box-only scene distance above this many logits (distance
/// times sharpness) at both ends are skipped: their opacity is below
/// `e^-36 ≈ 2e-16`, under f64 round-off for a quantity that ends up added
/// into sums of order 1.
pub(crate) const OPACITY_PRUNE_LOGITS: f64 = 36.0;

/// Ray marching stops once the remaining transmittance falls below this;
/// everything farther is hidden behind an effectively opaque surface.
pub(crate) const TRANSMITTANCE_FLOOR: f64 = 1e-14;

/// An instance whose box-only distance at a sample exceeds the nearest
/// evaluated composed distance by more than this many blend temperatures is
/// skipped there: its softmin share is below `e^-36` of the winner's, and —
/// because the composed distance is at least the box distance — it cannot be
/// the scene minimum either.
pub(crate) const BLEND_PRUNE_TEMPERATURES: f64 = 36.0;

/// Errors from ray construction, sampling, and rendering.
#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    /// A ray violated its invariants (unit direction, ordered range, one-hot
    /// label).
    #[error("invalid ray: {0}")]
    InvalidRay(&'static str),
    /// Interval opacities need at least two samples.
    #[error("need at least 2 samples along the ray, got {got}")]
    TooFewSamples { got: usize },
    /// Sample positions must be strictly ascending.
    #[error("sample positions not strictly ascending at index {index}")]
    NonAscendingT { index: usize },
    /// A scalar parameter was outside its valid range.
    #[error("bad parameter: {0}")]
    BadParam(&'static str),
}

/// A camera ray with its supervision target.
///
/// `gt_label` holds the observed soft instance assignment for this ray's
/// pixel: one entry per instance plus a final background entry, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub gt_label: Vec<f64>,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, t_near: f64, t_far: f64, gt_label: Vec<f64>) -> Self {
        Self {
            origin,
            dir,
            t_near,
            t_far,
            gt_label,
        }
    }

    /// Check the invariants: unit direction, `0 <= t_near < t_far`, and a
    /// well-formed label (entries in [0,1] summing to 1).
    pub fn validate(&self) -> Result<(), RenderError> {
        if (self.dir.norm() - 1.0).abs() > 1e-9 {
            return Err(RenderError::InvalidRay("direction must be a unit vector"));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(RenderError::InvalidRay("need 0 <= t_near < t_far < inf"));
        }
        if self.gt_label.is_empty() {
            return Err(RenderError::InvalidRay("label vector is empty"));
        }
        let mut sum = 0.0;
        for &v in &self.gt_label {
            if !(0.0..=1.0).contains(&v) {
                return Err(RenderError::InvalidRay("label entries must lie in [0,1]"));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(RenderError::InvalidRay("label entries must sum to 1"));
        }
        Ok(())
    }

    /// World position at parameter `t`.
    #[inline]
    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    /// Number of instance classes (label length minus the background entry).
    pub fn n_instances(&self) -> usize {
        self.gt_label.len().saturating_sub(1)
    }
}

/// Sample positions along one ray together with the field values measured
/// there: the scene distance (minimum over instances) and each instance's own
/// distance, all evaluated once at sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    t: Vec<f64>,
    scene_sdf: Vec<f64>,
    /// Row-major `[n_samples x n_instances]`.
    instance_sdf: Vec<f64>,
    n_instances: usize,
}

impl RaySamples {
    /// Build a validated sample set: `t` strictly ascending, one scene value
    /// per sample, and `n_instances` instance values per sample.
    pub fn new(
        t: Vec<f64>,
        scene_sdf: Vec<f64>,
        instance_sdf: Vec<f64>,
        n_instances: usize,
    ) -> Result<Self, RenderError> {
        if t.len() < 2 {
            return Err(RenderError::TooFewSamples { got: t.len() });
        }
        for (i, pair) in t.windows(2).enumerate() {
            if !(pair[0] < pair[1]) {
                return Err(RenderError::NonAscendingT { index: i + 1 });
            }
        }
        if n_instances == 0 {
            return Err(RenderError::BadParam("need at least one instance"));
        }
        if scene_sdf.len() != t.len() || instance_sdf.len() != t.len() * n_instances {
            return Err(RenderError::BadParam("sample column lengths disagree"));
        }
        Ok(Self {
            t,
            scene_sdf,
            instance_sdf,
            n_instances,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn scene_sdf(&self) -> &[f64] {
        &self.scene_sdf
    }

    /// Per-instance distances at sample `i`.
    pub fn instance_sdf_at(&self, i: usize) -> &[f64] {
        &self.instance_sdf[i * self.n_instances..(i + 1) * self.n_instances]
    }

    /// Debug-only expected hit depth: interval weights times entry positions.
    /// Near zero for rays that miss everything.
    pub fn expected_depth(&self, sharpness: f64) -> Result<f64, RenderError> {
        let w = weights::density_weights(&self.scene_sdf, sharpness)?;
        Ok(w.iter().zip(&self.t).map(|(wi, ti)| wi * ti).sum())
    }
}
