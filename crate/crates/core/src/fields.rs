//! Learned per-instance shape fields.
//!
//! An instance's geometry is represented as an oriented 3D box plus a small
//! neural residual that can only *add* distance — the composed field's
//! surface always lies inside the box, so optimizing the composed field
//! against image evidence tightens the box around the true shape without
//! ever letting the shape leak outside it. Residual-decoder weights are not
//! free parameters: a shared hypernetwork decodes them from per-instance
//! embedding vectors, pooling shape statistics across all instances in a
//! scene. The scene-level field is the pointwise minimum over instances.

mod instance;
mod mlp;

pub use instance::{
    hypernet_generate, init_embedding, instance_sdf, rdf_eval, scene_sdf, BoundBox, BoundInstance,
    BoundScene, InstanceEmbedding, InstanceField, RdfConfig, EMBED_DIM, INITIAL_RESIDUAL,
};
pub use mlp::{init_weights, mlp_forward, Activation, MlpSpec};

/// Errors from field construction and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    /// A vector had the wrong length for its role.
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A scene query needs at least one instance.
    #[error("scene contains no instances")]
    EmptyScene,
    /// Decoded residual weights were supplied without their decoder layout.
    #[error("residual weights present but no decoder architecture given")]
    MissingResidualSpec,
}
