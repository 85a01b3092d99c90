//! Tracks: multi-view correspondences and their preparation for bundle
//! adjustment — snapping to keypoints, merging, priority mixing, virtual
//! track synthesis, and triangulation.

mod prepare;
mod triangulate;
mod types;
mod virtual_tracks;

pub use prepare::{mix_tracks, snap_and_merge, DEFAULT_PAIR_BUDGET, DEFAULT_SNAP_RADIUS};
pub use triangulate::{triangulate, TriangulateError, MIN_PARALLAX};
pub use types::{Keypoint, KeypointSet, Observation, Track, TrackClass, TrackError, TrackSet};
pub use virtual_tracks::{
    generate_virtual_tracks, VirtualTrackError, DEFAULT_GLOBAL_RATIO, DEFAULT_VIRTUAL_SAMPLES,
};
