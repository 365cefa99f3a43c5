//! Pseudo-label files: one JSON record per line behind a format header.
//!
//! Line 1 is `{"format":"pseudo-labels","version":1}`; every following line
//! is one labeled box. Floats round-trip exactly (shortest-representation
//! encoding on write, exact parse on read), so a read-back file compares
//! bitwise equal to what was written.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::BoxParams;

use super::SceneIoError;

pub const LABEL_FORMAT_VERSION: u32 = 1;
const LABEL_FORMAT_NAME: &str = "pseudo-labels";

/// One auto-labeled 3D box for one target frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabel {
    pub frame_id: u32,
    pub instance_id: u32,
    /// Box extents (width, height, length), meters.
    pub dim: [f64; 3],
    /// Box center in world coordinates, meters.
    pub loc: [f64; 3],
    /// Rotation about the vertical axis, radians.
    pub yaw: f64,
    /// In [0, 1]; stays 1.0 until scoring has run.
    pub confidence: f64,
    /// Number of frames that contributed to the score; 0 until scoring.
    pub frames_used: u32,
}

impl PseudoLabel {
    /// A fresh, unscored label for `instance_id` as seen from `frame_id`.
    pub fn from_box(frame_id: u32, instance_id: u32, b: &BoxParams) -> Self {
        Self {
            frame_id,
            instance_id,
            dim: b.dim,
            loc: b.loc,
            yaw: b.yaw,
            confidence: 1.0,
            frames_used: 0,
        }
    }

    pub fn box_params(&self) -> BoxParams {
        BoxParams::new(self.dim, self.loc, self.yaw)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

fn validate_label(l: &PseudoLabel) -> Result<(), String> {
    if l.instance_id == 0 {
        return Err("instance id 0 is reserved for the background".into());
    }
    for (k, d) in l.dim.iter().enumerate() {
        if !(d.is_finite() && *d > 0.0) {
            return Err(format!("dim[{k}] = {d} must be positive and finite"));
        }
    }
    if !l.loc.iter().all(|v| v.is_finite()) || !l.yaw.is_finite() {
        return Err("location and yaw must be finite".into());
    }
    if !(0.0..=1.0).contains(&l.confidence) {
        return Err(format!("confidence {} must lie in [0, 1]", l.confidence));
    }
    Ok(())
}

/// Write `labels` to `path`, validating every record first so no NaN or
/// out-of-range value ever reaches disk.
pub fn write_pseudo_labels(labels: &[PseudoLabel], path: &Path) -> Result<(), SceneIoError> {
    for (index, l) in labels.iter().enumerate() {
        validate_label(l).map_err(|detail| SceneIoError::BadLabel { index, detail })?;
    }
    let header = Header {
        format: LABEL_FORMAT_NAME.to_string(),
        version: LABEL_FORMAT_VERSION,
    };
    let mut text = serde_json::to_string(&header).expect("header serializes") + "\n";
    for l in labels {
        text.push_str(&serde_json::to_string(l).expect("label fields are plain numbers"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| SceneIoError::Io {
        action: "write",
        path: path.to_path_buf(),
        source,
    })
}

/// Read a label file written by [`write_pseudo_labels`]. Errors carry the
/// 1-based line number of the offending record.
pub fn read_pseudo_labels(path: &Path) -> Result<Vec<PseudoLabel>, SceneIoError> {
    let text = fs::read_to_string(path).map_err(|source| SceneIoError::Io {
        action: "read",
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();

    let Some((_, first)) = lines.next() else {
        return Err(SceneIoError::LabelParse {
            path: path.to_path_buf(),
            line: 1,
            detail: "empty file; expected a format header".into(),
        });
    };
    let header: Header =
        serde_json::from_str(first).map_err(|e| SceneIoError::LabelParse {
            path: path.to_path_buf(),
            line: 1,
            detail: format!("bad header: {e}"),
        })?;
    if header.format != LABEL_FORMAT_NAME {
        return Err(SceneIoError::LabelParse {
            path: path.to_path_buf(),
            line: 1,
            detail: format!("format {:?} is not {LABEL_FORMAT_NAME:?}", header.format),
        });
    }
    if header.version != LABEL_FORMAT_VERSION {
        return Err(SceneIoError::LabelVersion {
            path: path.to_path_buf(),
            got: header.version,
            want: LABEL_FORMAT_VERSION,
        });
    }

    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let label: PseudoLabel =
            serde_json::from_str(line).map_err(|e| SceneIoError::LabelParse {
                path: path.to_path_buf(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        validate_label(&label).map_err(|detail| SceneIoError::LabelParse {
            path: path.to_path_buf(),
            line: idx + 1,
            detail,
        })?;
        out.push(label);
    }
    Ok(out)
}
