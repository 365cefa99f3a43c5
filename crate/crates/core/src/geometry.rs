//! Rigid transforms, pinhole projection, cuboid SDFs, 2D box math (IoU,
//! DIoU, Huber), 2D polygon SDFs, and rotated-box BEV/3D IoU.
//!
//! Everything here is a pure function over `f64` data, with one exception:
//! [`cuboid_sdf_posed`] is generic over the autodiff backend so the rendering
//! hot path evaluates the exact same formula whether it needs gradients or
//! not.

mod box2d;
mod box3d;
mod camera;
mod polygon;
mod rotated;
mod vec3;

pub use box2d::{diou2d, enclosing_box2d, huber, iou2d, Box2D};
pub use box3d::{
    box_vertices_posed, cuboid_sdf_from_local, cuboid_sdf_local, cuboid_sdf_posed,
    cuboid_sdf_world, local_coords_posed, transform_sdf, BoxParams, CORNER_SIGNS,
};
pub use camera::{project_point, project_points, project_vertex_generic, BehindCamera, CameraFrame, DEPTH_EPS};
pub use polygon::{polygon_sdf2d, PolygonError};
pub use rotated::bev_iou3d;
pub use vec3::{Mat3, Vec3};
