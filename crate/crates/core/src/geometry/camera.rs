//! Pinhole cameras and projection.

use crate::diffmath::Real;

use super::box2d::Box2D;
use super::vec3::{Mat3, Vec3};

/// Camera-frame depth at or below this value counts as "behind the camera".
pub const DEPTH_EPS: f64 = 1e-6;

/// One posed camera with its image-space annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u32,
    /// Intrinsics; upper-triangular with positive focal lengths.
    pub k: Mat3,
    /// World-to-camera rotation.
    pub rot: Mat3,
    /// World-to-camera translation.
    pub trans: Vec3,
    pub width: u32,
    pub height: u32,
    /// Name of the instance-mask image for this frame, when one exists.
    pub mask_ref: Option<String>,
    /// Observed 2D boxes, `(instance_id, box)`, in pixel coordinates.
    pub boxes2d: Vec<(u32, Box2D)>,
}

/// Marker error: at least one vertex projected with depth <= [`DEPTH_EPS`].
/// The caller drops this (frame, instance) term from its loss or score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BehindCamera;

impl std::fmt::Display for BehindCamera {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("point projects behind the camera")
    }
}

impl std::error::Error for BehindCamera {}

impl CameraFrame {
    /// A camera at `eye` looking at `target`, y-down image convention
    /// (world up maps to image up).
    pub fn look_at(
        frame_id: u32,
        eye: Vec3,
        target: Vec3,
        k: Mat3,
        width: u32,
        height: u32,
    ) -> Self {
        let fwd = (target - eye).normalized();
        let world_up = Vec3::new(0.0, 1.0, 0.0);
        // Camera basis: x right, y down, z forward.
        let right = fwd.cross(world_up).normalized();
        let down = fwd.cross(right).normalized();
        let rot = Mat3([
            [right.x, right.y, right.z],
            [down.x, down.y, down.z],
            [fwd.x, fwd.y, fwd.z],
        ]);
        let trans = -rot.mul_vec(eye);
        Self {
            frame_id,
            k,
            rot,
            trans,
            width,
            height,
            mask_ref: None,
            boxes2d: Vec::new(),
        }
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rot.mul_vec(p) + self.trans
    }

    /// Camera center in world coordinates.
    pub fn center_world(&self) -> Vec3 {
        -(self.rot.transpose().mul_vec(self.trans))
    }

    /// Ray through pixel `(u, v)` (origin at the camera center, unit world
    /// direction). Pixel coordinates are continuous; integer pixel `(r, c)`
    /// has center `(c + 0.5, r + 0.5)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let k = self.k.0;
        // Invert the upper-triangular K.
        let y = (v - k[1][2]) / k[1][1];
        let x = (u - k[0][2] - k[0][1] * y) / k[0][0];
        let dir_cam = Vec3::new(x, y, 1.0);
        let dir_world = self.rot.transpose().mul_vec(dir_cam).normalized();
        (self.center_world(), dir_world)
    }

    pub fn diag(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }

    /// Basic sanity of the calibration: K upper-triangular with positive
    /// focal lengths and unit bottom-right entry; rotation proper.
    pub fn validate(&self) -> Result<(), String> {
        let k = self.k.0;
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(format!("focal lengths must be positive, got K = {k:?}"));
        }
        if k[1][0].abs() > 1e-9 || k[2][0].abs() > 1e-9 || k[2][1].abs() > 1e-9 {
            return Err("K must be upper-triangular".into());
        }
        if (k[2][2] - 1.0).abs() > 1e-9 {
            return Err("K[2][2] must be 1".into());
        }
        if !self.rot.is_rotation(1e-6) {
            return Err("extrinsic rotation is not orthonormal with det +1".into());
        }
        Ok(())
    }
}

/// Project one world point: `(u, v, depth)`; errors when the camera-frame
/// depth is at or below [`DEPTH_EPS`].
pub fn project_point(frame: &CameraFrame, p: Vec3) -> Result<(f64, f64, f64), BehindCamera> {
    let c = frame.to_camera(p);
    if c.z <= DEPTH_EPS {
        return Err(BehindCamera);
    }
    let k = frame.k.0;
    let u = (k[0][0] * c.x + k[0][1] * c.y) / c.z + k[0][2];
    let v = k[1][1] * c.y / c.z + k[1][2];
    Ok((u, v, c.z))
}

/// Project a box's 8 world vertices. Any vertex at depth <= [`DEPTH_EPS`]
/// flags the whole set as behind the camera.
pub fn project_points(verts: &[Vec3; 8], frame: &CameraFrame) -> Result<[[f64; 2]; 8], BehindCamera> {
    let mut out = [[0.0; 2]; 8];
    for (o, &v) in out.iter_mut().zip(verts.iter()) {
        let (u, w, _) = project_point(frame, v)?;
        *o = [u, w];
    }
    Ok(out)
}

/// Generic projection of an autodiff point (camera pose is constant):
/// returns `(u, v)` or `None` when the forward depth is at or below
/// [`DEPTH_EPS`], mirroring [`project_point`].
pub fn project_vertex_generic<S: Real>(frame: &CameraFrame, p: [S; 3]) -> Option<(S, S)> {
    let r = frame.rot.0;
    let t = frame.trans;
    let xc = p[0].mul_c(r[0][0]).fma_c(r[0][1], p[1]).fma_c(r[0][2], p[2]).add_c(t.x);
    let yc = p[0].mul_c(r[1][0]).fma_c(r[1][1], p[1]).fma_c(r[1][2], p[2]).add_c(t.y);
    let zc = p[0].mul_c(r[2][0]).fma_c(r[2][1], p[1]).fma_c(r[2][2], p[2]).add_c(t.z);
    if zc.val() <= DEPTH_EPS {
        return None;
    }
    let k = frame.k.0;
    let u = (xc.mul_c(k[0][0]).fma_c(k[0][1], yc) / zc).add_c(k[0][2]);
    let v = (yc.mul_c(k[1][1]) / zc).add_c(k[1][2]);
    Some((u, v))
}
