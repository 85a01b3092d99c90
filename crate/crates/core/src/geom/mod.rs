//! Camera-side geometry: rotations, rigid poses, pinhole projection, depth
//! rasters and robust losses. Everything downstream (view-graph scoring,
//! averaging, bundle adjustment) is built on these types.

mod camera;
mod depth;
mod loss;
mod pose;
mod rotation;
pub mod so3;

pub use camera::{PinholeCamera, Projection, PLANE_EPSILON};
pub use depth::DepthMap;
pub use loss::RobustLoss;
pub use pose::{relative_pose, Pose};
pub use rotation::Rotation;

use thiserror::Error;

/// Errors from constructing geometry primitives out of raw data.
#[derive(Debug, Error)]
pub enum GeomError {
    #[error("raster has {got} values, expected {width}x{height}")]
    RasterSizeMismatch { width: u32, height: u32, got: usize },
    #[error("depth at ({x}, {y}) is {value}; depths must be finite and non-negative")]
    InvalidDepthValue { x: u32, y: u32, value: f64 },
    #[error("focal length must be positive and finite, got {0}")]
    BadFocal(f64),
    #[error("scale factor must be positive and finite, got {0}")]
    BadScale(f64),
}
