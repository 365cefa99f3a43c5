//! Core library for weakly supervised 3D box auto-labeling from multi-view
//! instance masks and 2D boxes.
//!
//! The pipeline optimizes per-instance 3D bounding boxes (dimensions,
//! location, yaw) so that their differentiably rendered silhouettes agree
//! with the observed instance masks across many source frames, and so that
//! their projected 2D bounds agree with the observed 2D boxes. Boxes are
//! modeled as signed distance fields; an optional hypernetwork-generated
//! residual field lets each instance deviate from a pure cuboid. Optimized
//! boxes are scored by cross-frame projection consistency and written out as
//! pseudo labels for downstream training.
//!
//! Module map:
//! - [`diffmath`]: reverse-mode autodiff tape, Adam, LR schedules.
//! - [`geometry`]: boxes, cameras, projections, 2D/BEV IoU, polygon SDFs.
//! - [`fields`]: per-instance box + residual shape fields, hypernetwork.
//! - [`rendering`]: ray sampling and instance-aware silhouette rendering.
//! - [`losses`]: projection/silhouette/eikonal terms, Hungarian matching.
//! - [`scene_io`]: scene manifests and masks, synthetic scenes, pseudo-label
//!   files, evaluation metrics.

pub mod diffmath;
pub mod fields;
pub mod geometry;
pub mod losses;
pub mod rendering;
pub mod scene_io;
