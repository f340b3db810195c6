//! Scene-side geometry: pointmaps, RoI pooling, nearest neighbours and the
//! ground plane estimate.

mod ground;
mod kdtree;
mod pointmap;

pub use ground::{estimate_ground_height, percentile, GROUND_PERCENTILE};
pub use kdtree::PointIndex;
pub use pointmap::{
    pointmap_to_camera, pointmap_to_world, roi_geo_pool, Anchor, PointFrame, Pointmap,
    PooledGeometry, DEFAULT_ROI_WINDOW,
};
