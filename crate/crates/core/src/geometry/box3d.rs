//! 3D box parameterization and its signed distance field.

use crate::diffmath::Real;

use super::vec3::{Mat3, Vec3};

/// An upright 3D bounding box: dimensions, world location of the box center,
/// and yaw about the world y-axis (the bird's-eye-view rotation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxParams {
    /// (width, height, length) in meters; strictly positive.
    pub dim: [f64; 3],
    /// Box center in the world frame, meters.
    pub loc: [f64; 3],
    /// Rotation about the y-axis, radians.
    pub yaw: f64,
}

/// Fixed corner-sign order used everywhere a vertex list appears. Index bit 2
/// is the x sign, bit 1 the y sign, bit 0 the z sign (minus first).
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, 1.0, 1.0],
];

impl BoxParams {
    pub fn new(dim: [f64; 3], loc: [f64; 3], yaw: f64) -> Self {
        debug_assert!(dim.iter().all(|&d| d > 0.0), "dimensions must be positive");
        Self { dim, loc, yaw }
    }

    pub fn rotation(&self) -> Mat3 {
        Mat3::rot_y(self.yaw)
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from_array(self.loc)
    }

    /// The 8 world-frame vertices: local corners at +-dim/2 per axis, rotated
    /// by yaw and translated to `loc`. Order follows [`CORNER_SIGNS`].
    pub fn vertices(&self) -> [Vec3; 8] {
        let r = self.rotation();
        let c = self.center();
        let h = [self.dim[0] * 0.5, self.dim[1] * 0.5, self.dim[2] * 0.5];
        CORNER_SIGNS.map(|s| {
            let local = Vec3::new(s[0] * h[0], s[1] * h[1], s[2] * h[2]);
            r.mul_vec(local) + c
        })
    }

    /// World point mapped into the box-local frame.
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        self.rotation().transpose().mul_vec(p - self.center())
    }

    /// True when `p` lies inside or on the box.
    pub fn contains(&self, p: Vec3) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.dim[0] * 0.5
            && q.y.abs() <= self.dim[1] * 0.5
            && q.z.abs() <= self.dim[2] * 0.5
    }

    /// Axis-aligned world bounds of the rotated box.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let (s, c) = self.yaw.sin_cos();
        let (hx, hy, hz) = (
            self.dim[0] * 0.5,
            self.dim[1] * 0.5,
            self.dim[2] * 0.5,
        );
        let ex = c.abs() * hx + s.abs() * hz;
        let ez = s.abs() * hx + c.abs() * hz;
        let ctr = self.center();
        (
            Vec3::new(ctr.x - ex, ctr.y - hy, ctr.z - ez),
            Vec3::new(ctr.x + ex, ctr.y + hy, ctr.z + ez),
        )
    }

    /// BEV footprint corners in the (x, z) plane, counter-clockwise by
    /// shoelace orientation.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hx, hz) = (self.dim[0] * 0.5, self.dim[2] * 0.5);
        let rot = |lx: f64, lz: f64| {
            [
                self.loc[0] + c * lx + s * lz,
                self.loc[2] - s * lx + c * lz,
            ]
        };
        let mut corners = [
            rot(-hx, -hz),
            rot(hx, -hz),
            rot(hx, hz),
            rot(-hx, hz),
        ];
        // Shoelace sign depends on yaw handedness in the (x, z) plane; force
        // one orientation so polygon clipping can assume it.
        let area2: f64 = (0..4)
            .map(|i| {
                let [x0, z0] = corners[i];
                let [x1, z1] = corners[(i + 1) % 4];
                x0 * z1 - x1 * z0
            })
            .sum();
        if area2 < 0.0 {
            corners.reverse();
        }
        corners
    }

    /// Intersection parameters `(t_enter, t_exit)` of a ray with this box, or
    /// `None` when the ray misses. Exact slab test in the box-local frame.
    pub fn ray_intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let rt = self.rotation().transpose();
        let o = rt.mul_vec(origin - self.center());
        let d = rt.mul_vec(dir);
        let h = [self.dim[0] * 0.5, self.dim[1] * 0.5, self.dim[2] * 0.5];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for (k, (&ok, &dk)) in [o.x, o.y, o.z].iter().zip([d.x, d.y, d.z].iter()).enumerate() {
            if dk.abs() < 1e-15 {
                if ok.abs() > h[k] {
                    return None;
                }
                continue;
            }
            let ta = (-h[k] - ok) / dk;
            let tb = (h[k] - ok) / dk;
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Signed distance from `p` to an axis-aligned box of dimensions `d` centered
/// at the origin: exact Euclidean distance outside, negative Chebyshev-style
/// depth inside, zero exactly on the surface.
pub fn cuboid_sdf_local(p: Vec3, d: Vec3) -> f64 {
    let qx = p.x.abs() - 0.5 * d.x;
    let qy = p.y.abs() - 0.5 * d.y;
    let qz = p.z.abs() - 0.5 * d.z;
    let outside = f64::norm3_relu(qx, qy, qz);
    outside.add_min0(f64::max3(qx, qy, qz))
}

/// Wrap a local field into a world-frame field under the rigid transform
/// `(R, t)`: the returned field evaluates the local field at `R^T (p - t)`.
pub fn transform_sdf(
    sdf: impl Fn(Vec3) -> f64,
    r: Mat3,
    t: Vec3,
) -> impl Fn(Vec3) -> f64 {
    let rt = r.transpose();
    move |p| sdf(rt.mul_vec(p - t))
}

/// Box-local coordinates `R_y(yaw)^T (p - loc)` of a *constant* world point
/// under a pose given by autodiff scalars (7 tape nodes).
#[inline]
pub fn local_coords_posed<S: Real>(p: [f64; 3], loc: &[S; 3], cos_yaw: S, sin_yaw: S) -> [S; 3] {
    let dx = loc[0].c_sub(p[0]);
    let dy = loc[1].c_sub(p[1]);
    let dz = loc[2].c_sub(p[2]);
    let x_loc = (cos_yaw * dx).fms(sin_yaw, dz);
    let z_loc = (sin_yaw * dx).fma(cos_yaw, dz);
    [x_loc, dy, z_loc]
}

/// Axis-aligned box distance evaluated from box-local coordinates
/// (6 tape nodes).
#[inline]
pub fn cuboid_sdf_from_local<S: Real>(p_local: &[S; 3], half: &[S; 3]) -> S {
    let qx = p_local[0].abs_sub(half[0]);
    let qy = p_local[1].abs_sub(half[1]);
    let qz = p_local[2].abs_sub(half[2]);
    let outside = S::norm3_relu(qx, qy, qz);
    outside.add_min0(S::max3(qx, qy, qz))
}

/// Signed distance of a *constant* world point to a box whose parameters are
/// autodiff scalars. This is the form the renderer records on the tape — a
/// single fused node per evaluation; with `S = f64` it computes the same
/// values bitwise as [`cuboid_sdf_world`] and as the unfused chain
/// [`local_coords_posed`] -> [`cuboid_sdf_from_local`].
#[inline]
pub fn cuboid_sdf_posed<S: Real>(
    p: [f64; 3],
    half: &[S; 3],
    loc: &[S; 3],
    cos_yaw: S,
    sin_yaw: S,
) -> S {
    S::cuboid_sdf(p, half, loc, cos_yaw, sin_yaw)
}

/// The 8 world-frame vertices of a box whose parameters are autodiff
/// scalars, in [`CORNER_SIGNS`] order (44 tape nodes).
pub fn box_vertices_posed<S: Real>(
    half: &[S; 3],
    loc: &[S; 3],
    cos_yaw: S,
    sin_yaw: S,
) -> [[S; 3]; 8] {
    let cos_hx = cos_yaw * half[0];
    let sin_hz = sin_yaw * half[2];
    let sin_hx = sin_yaw * half[0];
    let cos_hz = cos_yaw * half[2];
    CORNER_SIGNS.map(|s| {
        [
            loc[0].fma_c(s[0], cos_hx).fma_c(s[2], sin_hz),
            loc[1].fma_c(s[1], half[1]),
            loc[2].fma_c(-s[0], sin_hx).fma_c(s[2], cos_hz),
        ]
    })
}

/// Signed distance from world point `p` to the box.
pub fn cuboid_sdf_world(p: Vec3, b: &BoxParams) -> f64 {
    let (s, c) = b.yaw.sin_cos();
    let half = [b.dim[0] * 0.5, b.dim[1] * 0.5, b.dim[2] * 0.5];
    cuboid_sdf_posed(p.to_array(), &half, &b.loc, c, s)
}
