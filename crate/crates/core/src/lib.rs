//! Global structure-from-motion built from star-shaped local reconstructions.
//!
//! The crate takes a set of images with pairwise similarity scores, connects
//! them into a view graph, decomposes the graph into overlapping stars (an
//! image plus its retrieved neighbours), scores the geometric consistency of
//! every star with a forward-backward depth check, and then fuses the per-star
//! camera poses into a single global reconstruction through rotation and
//! similarity averaging followed by an augmented bundle adjustment over
//! classical, feedforward and virtual tracks.
//!
//! Everything is deterministic: all randomness flows from a single seed, and
//! reductions are ordered so that results are bit-identical across worker
//! thread counts.

pub mod averaging;
pub mod ba;
pub mod eval;
pub mod geom;
pub mod ids;
pub mod overlap;
pub mod par;
pub mod rng;
pub mod synth;
pub mod tracks;
pub mod viewgraph;

pub use averaging::RelativeMeasurement;
pub use geom::{DepthMap, PinholeCamera, Pose, Projection, RobustLoss, Rotation};
pub use ids::{CameraId, ImageId};
pub use synth::{
    LocalStarReconstruction, NoiseModel, SceneConfig, SyntheticScene, Trajectory,
};
pub use tracks::{Track, TrackClass, TrackSet};
pub use viewgraph::{CandidateScores, Star, ViewGraph};
