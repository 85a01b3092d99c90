//! Synthetic benchmark scenes with exact analytic geometry.
//!
//! This module is the stand-in for real image collections and the neural
//! front end: it lays out camera trajectories around piecewise-planar
//! surfaces, renders exact depth maps by ray casting, scores pairwise
//! co-visibility, and simulates per-star local reconstructions under a
//! configurable noise model — including deliberately poisoned "look-alike"
//! pairs whose hallucinated poses contradict their true depth. Because
//! every quantity has a closed form, downstream stages can be tested
//! against ground truth rather than against fixtures.

mod scene;
mod score;
mod star_sim;

pub use scene::{generate_scene, Rect, RoomLabel, SceneConfig, SyntheticScene, Trajectory};
pub use score::{candidate_scores, simulate_similarity};
pub use star_sim::{
    scene_classical_tracks, scene_keypoints, simulate_local_star, GaugeRecord,
    LocalStarReconstruction, NoiseModel,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("a scene needs at least {needed} cameras, got {got}")]
    TooFewCameras { needed: u32, got: u32 },
    #[error("bad image size {width}x{height}")]
    BadImageSize { width: u32, height: u32 },
    #[error("focal length must be positive and finite, got {0}")]
    BadFocal(f64),
    #[error("image {image} sees too little geometry: {fraction:.3} of pixels valid, need 0.30")]
    InsufficientCoverage { image: u32, fraction: f64 },
    #[error("invalid noise model: {0}")]
    BadNoise(String),
    #[error("image {0} does not exist in the scene")]
    NoSuchImage(u32),
    #[error("star member {0} does not exist in the scene")]
    NoSuchMember(u32),
}
