//! Scene datasets on disk, synthetic scenes with exact ray-cast masks,
//! pseudo-label files, and evaluation metrics.
//!
//! A scene directory holds:
//! - `manifest.json` — posed frames, 2D boxes, target frame ids, and (for
//!   synthetic data) the true 3D boxes; see [`load_scene`] / [`save_scene`].
//! - `masks/<frame>.png` — one 16-bit single-channel image per frame whose
//!   pixel values are instance ids (0 = background); see [`Mask`].
//!
//! Recovered boxes are exchanged as line-delimited JSON under a version
//! header (`labels.jsonl`); see [`write_pseudo_labels`] /
//! [`read_pseudo_labels`]. [`evaluate_labels`] aggregates their quality
//! against ground truth, and [`generate_synthetic`] builds seeded scenes
//! whose masks come from exact ray–solid intersection.

mod eval;
mod labels;
mod manifest;
mod mask;
mod synth;

pub use eval::{evaluate_labels, yaw_error, EvalOptions, EvalReport};
pub use labels::{
    read_pseudo_labels, write_pseudo_labels, PseudoLabel, LABEL_FORMAT_VERSION,
};
pub use manifest::{load_scene, save_scene, Scene, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
pub use mask::{contours_sdf, Mask};
pub use synth::{first_hit, generate_synthetic, SolidShape, SyntheticSpec, Trajectory};

use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong reading, writing, generating, or validating
/// scene data. File-level failures always name the offending path.
#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("could not {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("could not {action} {path}: {source}")]
    Image {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: manifest schema version {got} is unsupported (expected {want})")]
    SchemaVersion { path: PathBuf, got: u32, want: u32 },
    #[error("{path}: masks must be single-channel 16-bit PNG")]
    MaskFormat { path: PathBuf },
    #[error("frame {frame}: mask is {got_w}x{got_h} but the frame declares {want_w}x{want_h}")]
    MaskShape {
        frame: u32,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("frame {frame}: mask pixels carry instance id {id} but the frame lists no 2D box for it")]
    MaskIdWithoutBox { frame: u32, id: u32 },
    #[error("frame {frame}: invalid camera: {detail}")]
    BadPose { frame: u32, detail: String },
    #[error("invalid scene: {0}")]
    BadScene(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error(
        "placed only {placed} of {want} mutually disjoint boxes after {attempts} draws; \
         widen the location range or shrink the dimensions"
    )]
    PlacementExhausted {
        placed: usize,
        want: usize,
        attempts: usize,
    },
    #[error(
        "no box layout met the visibility floor {frac} in {attempts} attempts; \
         widen the camera path or lower the floor"
    )]
    VisibilityExhausted { frac: f64, attempts: usize },
    #[error("{path} line {line}: {detail}")]
    LabelParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}: label format version {got} is unsupported (expected {want})")]
    LabelVersion { path: PathBuf, got: u32, want: u32 },
    #[error("label {index}: {detail}")]
    BadLabel { index: usize, detail: String },
}
