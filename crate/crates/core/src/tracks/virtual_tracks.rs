//! Synthesis of depth-anchored tracks that carry pose priors into the final
//! refinement.
//!
//! Each track starts from a sampled pixel in a star's center image: the
//! pixel is lifted by the center's (rescaled) depth and becomes a fixed 3D
//! point, observed in the star's other members either through the star's
//! own relative poses or through the current global poses. The tracks
//! therefore pull the refinement toward whichever conditioning produced
//! them, without requiring any real correspondence.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::Rng;
use thiserror::Error;

use crate::geom::{Pose, Projection};
use crate::ids::ImageId;
use crate::rng::{derive_rng, StreamDomain};
use crate::synth::LocalStarReconstruction;

use super::{Observation, Track, TrackClass, TrackSet};

/// Default number of sampled pixels per star.
pub const DEFAULT_VIRTUAL_SAMPLES: usize = 100;

/// Default fraction of samples conditioned on global poses instead of the
/// star's local relative poses.
pub const DEFAULT_GLOBAL_RATIO: f64 = 0.10;

/// Draws per grid cell before giving up on finding valid depth there.
const CELL_ATTEMPTS: usize = 8;

#[derive(Debug, Error)]
pub enum VirtualTrackError {
    #[error("center image {0} has no valid depth to sample")]
    NoValidDepth(ImageId),
    #[error("star center {0} has no global pose")]
    MissingGlobalPose(ImageId),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("global conditioning ratio must lie in [0, 1], got {0}")]
    BadRatio(f64),
    #[error("star scale must be positive and finite, got {0}")]
    BadScale(f64),
}

/// Samples `samples` pixels from the star's center image (stratified grid
/// with jitter, valid-depth positions only) and builds one track per
/// sample.
///
/// The center depth map must already be rescaled into global units; `scale`
/// is the star's gauge scale, still needed to convert the star-gauge
/// relative translations. A `global_ratio` fraction of the tracks projects
/// its point through the current global poses (deterministically
/// interleaved); the rest project through the star's local relative poses.
/// Every track carries its 3D point (the depth-lifted sample mapped through
/// the center's global pose) and one observation per member with a global
/// pose: the sampled pixel in the center, plus each neighbor's projection.
/// Projections outside image bounds or behind a neighbor are kept;
/// projections within the imaging-plane guard band are dropped, and tracks
/// left with fewer than two observations are discarded. Intrinsics are the
/// star's own per-member cameras.
///
/// Sampling is keyed by `seed` and the star's center id, so stars can be
/// processed concurrently with reproducible results.
pub fn generate_virtual_tracks(
    star: &LocalStarReconstruction,
    global_poses: &BTreeMap<ImageId, Pose>,
    scale: f64,
    samples: usize,
    global_ratio: f64,
    seed: u64,
) -> Result<TrackSet, VirtualTrackError> {
    if samples == 0 {
        return Err(VirtualTrackError::NoSamples);
    }
    if !(global_ratio.is_finite() && (0.0..=1.0).contains(&global_ratio)) {
        return Err(VirtualTrackError::BadRatio(global_ratio));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(VirtualTrackError::BadScale(scale));
    }

    let center = star.center();
    let cam_center = star.camera(center).expect("the center is a member");
    let depth = star.depth(center).expect("the center is a member");
    let global_center = global_poses
        .get(&center)
        .ok_or(VirtualTrackError::MissingGlobalPose(center))?;

    let mut rng = derive_rng(seed, StreamDomain::VirtualTracks, center.0 as u64);

    let cols = (samples as f64).sqrt().ceil() as usize;
    let rows = samples.div_ceil(cols);
    let (w, h) = (star.width as f64, star.height as f64);

    let mut out = TrackSet::new();
    let mut successes = 0usize;
    for cell in 0..samples {
        let (row, col) = (cell / cols, cell % cols);

        // Jittered draws inside this cell until one lands on valid depth.
        let mut found = None;
        for _ in 0..CELL_ATTEMPTS {
            let x = ((col as f64 + rng.gen::<f64>()) * w / cols as f64).min(w - 1.0);
            let y = ((row as f64 + rng.gen::<f64>()) * h / rows as f64).min(h - 1.0);
            if let Some(d) = depth.sample_bilinear(x, y) {
                found = Some((Vector2::new(x, y), d));
                break;
            }
        }
        let Some((pixel, d)) = found else { continue };
        successes += 1;

        // Deterministic interleaving: the k-th success is globally
        // conditioned whenever the running quota floor(k * ratio) ticks up.
        let k = successes as f64;
        let global = (k * global_ratio).floor() > ((k - 1.0) * global_ratio).floor();
        let class = if global { TrackClass::VirtualGlobal } else { TrackClass::VirtualLocal };

        let x_center = cam_center.unproject(&pixel, d);
        let point = global_center.inverse_transform(&x_center);

        let mut observations = vec![Observation::new(center, pixel)];
        for &m in star.members() {
            if m == center {
                continue;
            }
            let Some(global_m) = global_poses.get(&m) else { continue };
            let cam_m = star.camera(m).expect("members carry focals");
            let in_m = if global {
                global_m.transform(&point)
            } else {
                let rel = star.relative(center, m).expect("members carry poses");
                rel.rotation.apply(&x_center) + rel.translation / scale
            };
            match cam_m.project(&in_m) {
                Projection::Valid(p) | Projection::Behind(p) => {
                    observations.push(Observation::new(m, p));
                }
                Projection::NearPlane => {}
            }
        }
        if observations.len() >= 2 {
            out.push(
                Track::new(class, observations, Some(point))
                    .expect("one observation per member by construction"),
            );
        }
    }

    if successes == 0 {
        return Err(VirtualTrackError::NoValidDepth(center));
    }
    Ok(out)
}
