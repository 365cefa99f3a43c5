//! Scene directory round trip: a JSON manifest plus one 16-bit PNG mask per
//! frame, and the validated in-memory [`Scene`] built from them.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Box2D, BoxParams, CameraFrame, Mat3, Vec3};

use super::mask::Mask;
use super::SceneIoError;

/// Version stamped into every manifest; readers reject anything else.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// File name of the manifest inside a scene directory.
pub const MANIFEST_FILE: &str = "manifest.json";

const UNITS: &str = "meters";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    schema_version: u32,
    /// Lengths in meters, angles in radians; pixel coordinates start at the
    /// top-left image corner.
    units: String,
    target_frames: Vec<u32>,
    frames: Vec<FrameDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_boxes: Option<Vec<GtBoxDoc>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    id: u32,
    width: u32,
    height: u32,
    intrinsics: [[f64; 3]; 3],
    /// World-to-camera rotation, rows.
    rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    translation: [f64; 3],
    /// Mask image path, relative to the scene directory.
    mask: String,
    boxes2d: Vec<Box2dDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Box2dDoc {
    instance: u32,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    rect: [f64; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtBoxDoc {
    instance: u32,
    dim: [f64; 3],
    loc: [f64; 3],
    yaw: f64,
}

/// A loaded multi-view scene: posed frames with their instance masks, the
/// frames whose boxes should be recovered, and (for synthetic data) the true
/// boxes. Construction validates everything, so a `Scene` in hand is
/// internally consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    frames: Vec<CameraFrame>,
    masks: Vec<Mask>,
    target_frames: Vec<u32>,
    gt_boxes: Option<Vec<(u32, BoxParams)>>,
    ids_per_frame: Vec<BTreeSet<u32>>,
}

impl Scene {
    /// Validate and index a scene. Checks, in order: parallel lengths,
    /// unique frame ids, camera sanity, mask/frame shape agreement, 2D box
    /// sanity (finite, non-empty, unique non-zero instance ids), every mask
    /// pixel id having a 2D box, target ids existing, and ground-truth boxes
    /// being positive and uniquely labeled. Frames without a mask path get
    /// the default `masks/<id>.png` name.
    pub fn assemble(
        mut frames: Vec<CameraFrame>,
        masks: Vec<Mask>,
        target_frames: Vec<u32>,
        gt_boxes: Option<Vec<(u32, BoxParams)>>,
    ) -> Result<Self, SceneIoError> {
        if frames.is_empty() {
            return Err(SceneIoError::BadScene("a scene needs at least one frame".into()));
        }
        if frames.len() != masks.len() {
            return Err(SceneIoError::BadScene(format!(
                "{} frames but {} masks",
                frames.len(),
                masks.len()
            )));
        }
        let mut seen_ids = BTreeSet::new();
        for frame in &frames {
            if !seen_ids.insert(frame.frame_id) {
                return Err(SceneIoError::BadScene(format!(
                    "duplicate frame id {}",
                    frame.frame_id
                )));
            }
        }
        let mut ids_per_frame = Vec::with_capacity(frames.len());
        for (frame, mask) in frames.iter_mut().zip(&masks) {
            frame
                .validate()
                .map_err(|detail| SceneIoError::BadPose {
                    frame: frame.frame_id,
                    detail,
                })?;
            if !frame.trans.to_array().iter().all(|v| v.is_finite()) {
                return Err(SceneIoError::BadPose {
                    frame: frame.frame_id,
                    detail: "translation must be finite".into(),
                });
            }
            if mask.width() != frame.width || mask.height() != frame.height {
                return Err(SceneIoError::MaskShape {
                    frame: frame.frame_id,
                    got_w: mask.width(),
                    got_h: mask.height(),
                    want_w: frame.width,
                    want_h: frame.height,
                });
            }
            let mut ids = BTreeSet::new();
            for (id, b) in &frame.boxes2d {
                if *id == 0 {
                    return Err(SceneIoError::BadScene(format!(
                        "frame {}: instance id 0 is reserved for the background",
                        frame.frame_id
                    )));
                }
                let coords = [b.x_min, b.y_min, b.x_max, b.y_max];
                if !coords.iter().all(|v| v.is_finite()) || !(b.x_min < b.x_max && b.y_min < b.y_max)
                {
                    return Err(SceneIoError::BadScene(format!(
                        "frame {}: instance {} has a degenerate 2D box {:?}",
                        frame.frame_id, id, coords
                    )));
                }
                if !ids.insert(*id) {
                    return Err(SceneIoError::BadScene(format!(
                        "frame {}: instance {} appears twice in the 2D boxes",
                        frame.frame_id, id
                    )));
                }
            }
            for mask_id in mask.instance_ids() {
                if !ids.contains(&(mask_id as u32)) {
                    return Err(SceneIoError::MaskIdWithoutBox {
                        frame: frame.frame_id,
                        id: mask_id as u32,
                    });
                }
            }
            if frame.mask_ref.is_none() {
                frame.mask_ref = Some(default_mask_name(frame.frame_id));
            }
            ids_per_frame.push(ids);
        }
        if target_frames.is_empty() {
            return Err(SceneIoError::BadScene(
                "at least one target frame is required".into(),
            ));
        }
        for t in &target_frames {
            if !seen_ids.contains(t) {
                return Err(SceneIoError::BadScene(format!(
                    "target frame {t} does not exist"
                )));
            }
        }
        if let Some(gt) = &gt_boxes {
            let mut gt_ids = BTreeSet::new();
            for (id, b) in gt {
                if *id == 0 {
                    return Err(SceneIoError::BadScene(
                        "ground-truth instance id 0 is reserved for the background".into(),
                    ));
                }
                if !gt_ids.insert(*id) {
                    return Err(SceneIoError::BadScene(format!(
                        "ground-truth instance {id} appears twice"
                    )));
                }
                let vals = [
                    b.dim[0], b.dim[1], b.dim[2], b.loc[0], b.loc[1], b.loc[2], b.yaw,
                ];
                if !vals.iter().all(|v| v.is_finite()) || b.dim.iter().any(|&d| d <= 0.0) {
                    return Err(SceneIoError::BadScene(format!(
                        "ground-truth instance {id} has a degenerate box"
                    )));
                }
            }
        }
        Ok(Self {
            frames,
            masks,
            target_frames,
            gt_boxes,
            ids_per_frame,
        })
    }

    pub fn frames(&self) -> &[CameraFrame] {
        &self.frames
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Frame ids whose boxes are to be recovered.
    pub fn target_frames(&self) -> &[u32] {
        &self.target_frames
    }

    /// True boxes `(instance id, box)`, present for synthetic scenes.
    pub fn gt_boxes(&self) -> Option<&[(u32, BoxParams)]> {
        self.gt_boxes.as_deref()
    }

    /// Instance ids annotated in frame `index` (by position, not id).
    pub fn instance_ids(&self, index: usize) -> &BTreeSet<u32> {
        &self.ids_per_frame[index]
    }

    /// Union of annotated instance ids over all frames.
    pub fn all_instance_ids(&self) -> BTreeSet<u32> {
        self.ids_per_frame.iter().flatten().copied().collect()
    }

    /// Position of the frame with id `frame_id`.
    pub fn frame_index(&self, frame_id: u32) -> Option<usize> {
        self.frames.iter().position(|f| f.frame_id == frame_id)
    }
}

pub(crate) fn default_mask_name(frame_id: u32) -> String {
    format!("masks/{frame_id:06}.png")
}

/// Write `manifest.json` and every mask image under `dir`, creating
/// directories as needed. Output bytes depend only on the scene contents.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<(), SceneIoError> {
    let io_err = |action: &'static str, path: &Path| {
        let path = path.to_path_buf();
        move |source| SceneIoError::Io {
            action,
            path,
            source,
        }
    };
    fs::create_dir_all(dir).map_err(io_err("create", dir))?;
    for (frame, mask) in scene.frames.iter().zip(&scene.masks) {
        let rel = frame
            .mask_ref
            .as_deref()
            .expect("assemble fills every mask name");
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err("create", parent))?;
        }
        mask.write_png(&path)?;
    }
    let doc = ManifestDoc {
        schema_version: MANIFEST_SCHEMA_VERSION,
        units: UNITS.into(),
        target_frames: scene.target_frames.clone(),
        frames: scene
            .frames
            .iter()
            .map(|f| FrameDoc {
                id: f.frame_id,
                width: f.width,
                height: f.height,
                intrinsics: f.k.0,
                rotation: f.rot.0,
                translation: f.trans.to_array(),
                mask: f.mask_ref.clone().expect("assemble fills every mask name"),
                boxes2d: f
                    .boxes2d
                    .iter()
                    .map(|(id, b)| Box2dDoc {
                        instance: *id,
                        rect: [b.x_min, b.y_min, b.x_max, b.y_max],
                    })
                    .collect(),
            })
            .collect(),
        gt_boxes: scene.gt_boxes.as_ref().map(|gt| {
            gt.iter()
                .map(|(id, b)| GtBoxDoc {
                    instance: *id,
                    dim: b.dim,
                    loc: b.loc,
                    yaw: b.yaw,
                })
                .collect()
        }),
    };
    let text = serde_json::to_string_pretty(&doc).expect("plain structs always serialize") + "\n";
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text).map_err(io_err("write", &mpath))?;
    Ok(())
}

/// Read a scene directory written by [`save_scene`] (or authored by hand):
/// parse and version-check the manifest, load every referenced mask, and
/// validate the result. Errors name the file that caused them.
pub fn load_scene(dir: &Path) -> Result<Scene, SceneIoError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|source| SceneIoError::Io {
        action: "read",
        path: mpath.clone(),
        source,
    })?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|source| SceneIoError::Json {
        path: mpath.clone(),
        source,
    })?;
    if doc.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(SceneIoError::SchemaVersion {
            path: mpath.clone(),
            got: doc.schema_version,
            want: MANIFEST_SCHEMA_VERSION,
        });
    }
    if doc.units != UNITS {
        return Err(SceneIoError::BadScene(format!(
            "unsupported units {:?} (expected {UNITS:?})",
            doc.units
        )));
    }
    let mut frames = Vec::with_capacity(doc.frames.len());
    let mut masks = Vec::with_capacity(doc.frames.len());
    for fd in doc.frames {
        let mask = Mask::read_png(&dir.join(&fd.mask))?;
        frames.push(CameraFrame {
            frame_id: fd.id,
            k: Mat3(fd.intrinsics),
            rot: Mat3(fd.rotation),
            trans: Vec3::from_array(fd.translation),
            width: fd.width,
            height: fd.height,
            mask_ref: Some(fd.mask),
            boxes2d: fd
                .boxes2d
                .into_iter()
                .map(|b| {
                    (
                        b.instance,
                        Box2D {
                            x_min: b.rect[0],
                            y_min: b.rect[1],
                            x_max: b.rect[2],
                            y_max: b.rect[3],
                        },
                    )
                })
                .collect(),
        });
        masks.push(mask);
    }
    let gt_boxes = doc.gt_boxes.map(|gt| {
        gt.into_iter()
            .map(|g| (g.instance, BoxParams { dim: g.dim, loc: g.loc, yaw: g.yaw }))
            .collect()
    });
    Scene::assemble(frames, masks, doc.target_frames, gt_boxes)
}
