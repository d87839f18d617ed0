//! Shared domain types and their on-disk formats.

mod heatmap;
mod point_cloud;
mod radar;
mod skeleton;

pub use heatmap::{encode_heatmap, heatmap_read, heatmap_write, meta_path, Axis, Heatmap, HeatmapGrid};
pub use point_cloud::{Detection, PointCloud};
pub use radar::{RadarParams, SPEED_OF_LIGHT};
pub use skeleton::Skeleton;

/// The shipped 14-joint skeleton.
pub fn default_skeleton() -> Skeleton {
    Skeleton::default_skeleton()
}
