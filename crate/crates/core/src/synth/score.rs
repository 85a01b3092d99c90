//! Pairwise similarity scores from ground-truth co-visibility.

use nalgebra::Vector2;
use rand::Rng;

use crate::ids::ImageId;
use crate::rng::{derive_rng, pair_salt, StreamDomain};
use crate::viewgraph::CandidateScores;

use super::scene::{SyntheticScene, Trajectory};

/// Stride of the pixel grid sampled when estimating co-visible fractions.
const SCORE_STRIDE: u32 = 4;
/// Scores for designated look-alike pairs are drawn uniformly from this
/// band: well below the strongest graph-building threshold, yet high
/// enough to be picked up once thresholds relax.
const DOPPELGANGER_BAND: (f64, f64) = (0.3, 0.6);

/// Fraction of image `i`'s surface (valid-depth pixels, sampled with
/// `SCORE_STRIDE`) that is also visible in image `j`.
fn covisible_fraction(scene: &SyntheticScene, i: ImageId, j: ImageId) -> f64 {
    let camera = scene.camera();
    let pose_i = scene.pose(i);
    let center_i = pose_i.center();
    let rot_i_t = pose_i.rotation.inverse();
    let mut valid = 0usize;
    let mut shared = 0usize;
    for y in (0..camera.height).step_by(SCORE_STRIDE as usize) {
        for x in (0..camera.width).step_by(SCORE_STRIDE as usize) {
            let ray_cam = camera.normalized_ray(&Vector2::new(x as f64, y as f64));
            let ray_world = rot_i_t.apply(&ray_cam);
            let Some(t) = scene.raycast(&center_i, &ray_world) else {
                continue;
            };
            valid += 1;
            let point = center_i + ray_world * t;
            if scene.project_visible(&point, j).is_some() {
                shared += 1;
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        shared as f64 / valid as f64
    }
}

/// Similarity score for one image pair, in `[0, 1]`.
///
/// Genuine pairs score their symmetric co-visible surface fraction;
/// designated look-alike pairs instead draw from a fixed mid-range band,
/// emulating a retrieval system fooled by repeated structure. Deterministic
/// per scene seed.
pub fn simulate_similarity(scene: &SyntheticScene, i: ImageId, j: ImageId) -> f64 {
    if scene.is_doppelganger(i, j) {
        let (lo, hi) = DOPPELGANGER_BAND;
        let (a, b) = (i.min(j), i.max(j));
        let mut rng = derive_rng(
            scene.config().seed,
            StreamDomain::Scores,
            pair_salt(a.0, b.0),
        );
        return rng.gen_range(lo..hi);
    }
    if i == j {
        return 1.0;
    }
    0.5 * (covisible_fraction(scene, i, j) + covisible_fraction(scene, j, i))
}

/// Scores every candidate pair of the scene, honoring its retrieval
/// window. Look-alike pairs are always included regardless of window.
pub fn candidate_scores(scene: &SyntheticScene) -> CandidateScores {
    let n = scene.camera_count();
    let window = scene.config().candidate_window;
    let all_pairs = matches!(scene.config().trajectory, Trajectory::TwoRooms { .. }) || window == 0;
    let mut scores = CandidateScores::new(window);
    for id in scene.images() {
        scores.add_image(id);
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let in_window = if all_pairs {
                true
            } else {
                let direct = b - a;
                let wrapped = match scene.config().trajectory {
                    Trajectory::Loop => n - direct,
                    _ => u32::MAX,
                };
                direct.min(wrapped) <= window
            };
            let (i, j) = (ImageId(a), ImageId(b));
            if in_window || scene.is_doppelganger(i, j) {
                let alpha = simulate_similarity(scene, i, j);
                scores
                    .insert(i, j, alpha)
                    .expect("scores are clamped to [0,1] by construction");
            }
        }
    }
    scores
}
