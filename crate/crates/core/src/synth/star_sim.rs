//! Simulated per-star local reconstructions, plus synthesized keypoints and
//! detector-style tracks.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use crate::geom::{relative_pose, DepthMap, PinholeCamera, Pose, Rotation};
use crate::ids::ImageId;
use crate::rng::{derive_rng, StreamDomain};
use crate::tracks::{Keypoint, KeypointSet, Observation, Track, TrackClass, TrackSet};
use crate::viewgraph::Star;

use super::scene::SyntheticScene;
use super::SynthError;

/// Calibrated error model for the simulated local reconstructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Per-member rotation perturbation, degrees (isotropic in the tangent
    /// space).
    pub rotation_sigma_deg: f64,
    /// Per-member camera-center perturbation, as a fraction of the star's
    /// mean baseline.
    pub center_sigma_frac: f64,
    /// Per-pixel relative depth perturbation.
    pub depth_sigma_rel: f64,
    /// Per-member relative focal perturbation.
    pub focal_sigma_rel: f64,
    /// The hidden per-star scale is drawn uniformly from this range.
    pub scale_jitter: (f64, f64),
    /// Probability that one member's pose is replaced by a random pose.
    pub outlier_probability: f64,
}

impl NoiseModel {
    /// The exact, noise-free model.
    pub fn none() -> Self {
        NoiseModel {
            rotation_sigma_deg: 0.0,
            center_sigma_frac: 0.0,
            depth_sigma_rel: 0.0,
            focal_sigma_rel: 0.0,
            scale_jitter: (1.0, 1.0),
            outlier_probability: 0.0,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let nonneg = self.rotation_sigma_deg >= 0.0
            && self.center_sigma_frac >= 0.0
            && self.depth_sigma_rel >= 0.0
            && self.focal_sigma_rel >= 0.0
            && (0.0..=1.0).contains(&self.outlier_probability);
        let (lo, hi) = self.scale_jitter;
        if !nonneg {
            return Err(SynthError::BadNoise("negative sigma or bad probability".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(SynthError::BadNoise(format!("scale jitter range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// The hidden similarity transform a star was generated under: star
/// coordinates are `x_star = s * (R * x_world + t)`. Kept only so oracle
/// tests can map results back to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeRecord {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl GaugeRecord {
    /// Maps a camera-from-world pose into the star's gauge (camera frame
    /// rescaled along with the scene, so depths scale by `s`).
    pub fn to_star_pose(&self, world: &Pose) -> Pose {
        let rotation = world.rotation.compose(&self.rotation.inverse());
        let translation = (world.translation - rotation.apply(&self.translation)) * self.scale;
        Pose::new(rotation, translation)
    }

    /// Inverse of [`GaugeRecord::to_star_pose`].
    pub fn to_world_pose(&self, star: &Pose) -> Pose {
        let rotation = star.rotation.compose(&self.rotation);
        let translation = star.translation / self.scale + star.rotation.apply(&self.translation);
        Pose::new(rotation, translation)
    }
}

/// What the local inference step hands downstream for one star: poses,
/// focals, depth maps and tracks, all in the star's own gauge.
#[derive(Debug, Clone)]
pub struct LocalStarReconstruction {
    pub star: Star,
    pub poses: BTreeMap<ImageId, Pose>,
    pub focals: BTreeMap<ImageId, f64>,
    pub depths: BTreeMap<ImageId, DepthMap>,
    pub tracks: TrackSet,
    pub width: u32,
    pub height: u32,
    /// Present only for simulated stars; ingested ones have no known gauge.
    pub gauge: Option<GaugeRecord>,
}

impl LocalStarReconstruction {
    pub fn center(&self) -> ImageId {
        self.star.center
    }

    pub fn members(&self) -> &[ImageId] {
        &self.star.members
    }

    pub fn pose(&self, id: ImageId) -> Option<&Pose> {
        self.poses.get(&id)
    }

    pub fn depth(&self, id: ImageId) -> Option<&DepthMap> {
        self.depths.get(&id)
    }

    pub fn camera(&self, id: ImageId) -> Option<PinholeCamera> {
        let focal = *self.focals.get(&id)?;
        Some(
            PinholeCamera::centered(focal, self.width, self.height)
                .expect("member focals are validated positive"),
        )
    }

    /// Relative pose mapping member `i` coordinates to member `j`
    /// coordinates, in star-gauge units.
    pub fn relative(&self, i: ImageId, j: ImageId) -> Option<Pose> {
        Some(relative_pose(self.poses.get(&i)?, self.poses.get(&j)?))
    }
}

fn standard_normal_vec3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let w: f64 = rng.sample(StandardNormal);
    let v = standard_normal_vec3(rng);
    Rotation::from_quaternion_wxyz(w, v.x, v.y, v.z)
}

/// Mean pairwise distance between the true camera centers of the star.
fn mean_baseline(scene: &SyntheticScene, members: &[ImageId]) -> f64 {
    let centers: Vec<Vector3<f64>> = members.iter().map(|&m| scene.pose(m).center()).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in 0..centers.len() {
        for b in (a + 1)..centers.len() {
            sum += (centers[a] - centers[b]).norm();
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { sum / count as f64 }
}

/// Simulates what a feedforward reconstruction model would return for one
/// star: ground truth mapped through a hidden random similarity gauge, then
/// corrupted per the noise model.
///
/// Look-alike members — images whose pair with the star center is marked as
/// a doppelganger — are "hallucinated": their pose is an invented in-place
/// pose next to the center, while their depth map keeps their true, distant
/// geometry. The combination is self-contradictory, which is exactly what
/// the downstream depth-consistency check must catch.
///
/// Deterministic: randomness is keyed by the scene seed and the star's
/// center id, so stars can be simulated concurrently and repeatably.
pub fn simulate_local_star(
    scene: &SyntheticScene,
    star: &Star,
    noise: &NoiseModel,
) -> Result<LocalStarReconstruction, SynthError> {
    noise.validate()?;
    for &m in &star.members {
        if m.0 >= scene.camera_count() {
            return Err(SynthError::NoSuchMember(m.0));
        }
    }

    let mut rng = derive_rng(scene.config().seed, StreamDomain::Star, star.center.0 as u64);

    // Hidden gauge: uniform random rotation, bounded translation, scale
    // from the jitter range.
    let gauge_rotation = random_rotation(&mut rng);
    let gauge_translation = Vector3::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
    );
    let (lo, hi) = noise.scale_jitter;
    let scale = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let gauge = GaugeRecord {
        rotation: gauge_rotation,
        translation: gauge_translation,
        scale,
    };

    let baseline_star = mean_baseline(scene, &star.members) * scale;
    let sigma_rot = noise.rotation_sigma_deg.to_radians();
    let sigma_center = noise.center_sigma_frac * baseline_star;

    let mut poses = BTreeMap::new();
    let mut focals = BTreeMap::new();
    for &m in &star.members {
        // A look-alike member gets a hallucinated pose right next to the
        // star center, facing the same way.
        let world = if m != star.center && scene.is_doppelganger(star.center, m) {
            let center_pose = scene.pose(star.center);
            Pose::from_rotation_center(
                center_pose.rotation,
                center_pose.center() + Vector3::new(0.25, 0.0, 0.0),
            )
        } else {
            *scene.pose(m)
        };

        // Fixed draw order per member keeps streams aligned regardless of
        // which sigmas are zero.
        let rot_eps = standard_normal_vec3(&mut rng) * sigma_rot;
        let center_eps = standard_normal_vec3(&mut rng) * sigma_center;
        let focal_eps: f64 = rng.sample::<f64, _>(StandardNormal) * noise.focal_sigma_rel;

        let exact = gauge.to_star_pose(&world);
        let rotation = Rotation::from_scaled_axis(rot_eps).compose(&exact.rotation);
        let center = exact.center() + center_eps;
        poses.insert(m, Pose::from_rotation_center(rotation, center));
        focals.insert(m, (scene.focal() * (1.0 + focal_eps)).max(scene.focal() * 1e-3));
    }

    // Outlier injection: with the configured probability, one non-center
    // member's pose is replaced wholesale.
    let outlier_draw: f64 = rng.gen();
    if outlier_draw < noise.outlier_probability {
        let neighbors: Vec<ImageId> =
            star.members.iter().copied().filter(|&m| m != star.center).collect();
        if !neighbors.is_empty() {
            let victim = neighbors[rng.gen_range(0..neighbors.len())];
            let rotation = random_rotation(&mut rng);
            let radius = (2.0 * baseline_star).max(1.0);
            let center = poses[&star.center].center()
                + Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * radius;
            poses.insert(victim, Pose::from_rotation_center(rotation, center));
        }
    }

    // Depths: true geometry (even for hallucinated members — the image
    // content is real), scaled into star units, with optional per-pixel
    // relative noise.
    let mut depths = BTreeMap::new();
    for &m in &star.members {
        let exact = scene.render_depth(m);
        let mut values = exact.values().to_vec();
        for v in values.iter_mut() {
            if *v > 0.0 {
                *v *= scale;
                if noise.depth_sigma_rel > 0.0 {
                    let eps: f64 = rng.sample(StandardNormal);
                    *v *= (1.0 + noise.depth_sigma_rel * eps).max(0.05);
                }
            }
        }
        depths.insert(
            m,
            DepthMap::new(exact.width(), exact.height(), values)
                .expect("scaled depths stay positive and finite"),
        );
    }

    let tracks = star_tracks(scene, star);

    Ok(LocalStarReconstruction {
        star: star.clone(),
        poses,
        focals,
        depths,
        tracks,
        width: scene.config().width,
        height: scene.config().height,
        gauge: Some(gauge),
    })
}

/// Correspondences a feedforward model would report for the star: every
/// surface feature seen by at least two members, with pixel positions
/// quantized to the integer grid (models the discretization of dense
/// correspondence maps). Observations always come from true geometry — the
/// model sees the actual images — regardless of pose noise.
fn star_tracks(scene: &SyntheticScene, star: &Star) -> TrackSet {
    let mut tracks = TrackSet::new();
    for point in scene.feature_points() {
        let mut observations = Vec::new();
        for &m in &star.members {
            if let Some(pixel) = scene.project_visible(point, m) {
                observations.push(Observation::new(
                    m,
                    Vector2::new(pixel.x.round(), pixel.y.round()),
                ));
            }
        }
        if observations.len() >= 2 {
            tracks.push(
                Track::new(TrackClass::Feedforward, observations, None)
                    .expect("one observation per member by construction"),
            );
        }
    }
    tracks
}

/// Synthesized interest points: the exact projections of every surface
/// feature, tagged with the feature index as detector id.
pub fn scene_keypoints(scene: &SyntheticScene) -> KeypointSet {
    let mut set = KeypointSet::new();
    for (index, point) in scene.feature_points().iter().enumerate() {
        for image in scene.images() {
            if let Some(position) = scene.project_visible(point, image) {
                set.insert(Keypoint { image, position, detector: index as u32 });
            }
        }
    }
    set
}

/// Detector-and-matcher style tracks: exact projections of each surface
/// feature across all images that see it.
pub fn scene_classical_tracks(scene: &SyntheticScene) -> TrackSet {
    let mut tracks = TrackSet::new();
    for point in scene.feature_points() {
        let mut observations = Vec::new();
        for image in scene.images() {
            if let Some(pixel) = scene.project_visible(point, image) {
                observations.push(Observation::new(image, pixel));
            }
        }
        if observations.len() >= 2 {
            tracks.push(
                Track::new(TrackClass::Classical, observations, None)
                    .expect("one observation per image by construction"),
            );
        }
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::{generate_scene, SceneConfig, Trajectory};
    use crate::synth::{candidate_scores, simulate_similarity};
    use crate::viewgraph::{dynamic_threshold_connect, ThresholdParams};

    fn loop_scene(seed: u64) -> SyntheticScene {
        generate_scene(SceneConfig::new(Trajectory::Loop, 12, seed)).unwrap()
    }

    fn star_of(center: u32, members: &[u32]) -> Star {
        let mut ms: Vec<ImageId> = members.iter().copied().map(ImageId).collect();
        ms.sort_unstable();
        Star { center: ImageId(center), members: ms }
    }

    #[test]
    fn noiseless_star_is_ground_truth_in_disguise() {
        let scene = loop_scene(3);
        let star = star_of(1, &[0, 1, 2]);
        let local = simulate_local_star(&scene, &star, &NoiseModel::none()).unwrap();
        let gauge = local.gauge.as_ref().unwrap();
        let diameter = scene.diameter();
        for &m in local.members() {
            let recovered = gauge.to_world_pose(local.pose(m).unwrap());
            let truth = scene.pose(m);
            assert!(recovered.rotation.geodesic_to(&truth.rotation) < 1e-10);
            assert!((recovered.center() - truth.center()).norm() < 1e-10 * diameter);
        }
    }

    #[test]
    fn depth_scale_ratio_is_constant_across_members() {
        let scene = loop_scene(3);
        let star = star_of(1, &[0, 1, 2]);
        let mut noise = NoiseModel::none();
        noise.scale_jitter = (0.5, 2.0);
        let local = simulate_local_star(&scene, &star, &noise).unwrap();
        let s = local.gauge.as_ref().unwrap().scale;
        assert!((0.5..2.0).contains(&s));
        for &m in local.members() {
            let truth = scene.render_depth(m);
            let noisy = local.depth(m).unwrap();
            for (a, b) in noisy.values().iter().zip(truth.values()) {
                if *b > 0.0 {
                    assert!((a / b - s).abs() < 1e-9, "ratio {} vs {}", a / b, s);
                }
            }
        }
    }

    #[test]
    fn simulation_is_bit_deterministic() {
        let scene = loop_scene(7);
        let star = star_of(4, &[3, 4, 5]);
        let noise = NoiseModel {
            rotation_sigma_deg: 1.0,
            center_sigma_frac: 0.01,
            depth_sigma_rel: 0.01,
            focal_sigma_rel: 0.01,
            scale_jitter: (0.7, 1.4),
            outlier_probability: 0.3,
        };
        let a = simulate_local_star(&scene, &star, &noise).unwrap();
        let b = simulate_local_star(&scene, &star, &noise).unwrap();
        for &m in a.members() {
            assert_eq!(a.pose(m).unwrap().translation, b.pose(m).unwrap().translation);
            assert_eq!(
                a.pose(m).unwrap().rotation.quaternion_wxyz(),
                b.pose(m).unwrap().rotation.quaternion_wxyz()
            );
            assert_eq!(a.depth(m).unwrap().values(), b.depth(m).unwrap().values());
        }
        assert_eq!(a.tracks, b.tracks);
    }

    #[test]
    fn rotation_noise_statistics_match_the_tangent_model() {
        // Relative rotations between two members perturbed by independent
        // isotropic tangent noise have geodesic error ||e_j - R e_i||, a
        // chi-distributed magnitude with 3 dof and per-axis sigma sqrt(2)*s.
        // Its mean is sqrt(2)*s * 2*sqrt(2/pi) = 2.2568*s. (A naive reading
        // would predict sqrt(2)*s; the Monte-Carlo agrees with the chi
        // mean, not the naive value.)
        let sigma_deg = 1.0;
        let noise = NoiseModel { rotation_sigma_deg: sigma_deg, ..NoiseModel::none() };
        let mut errors = Vec::new();
        for seed in 0..250 {
            let scene =
                generate_scene(SceneConfig::new(Trajectory::Corridor, 4, 1000 + seed)).unwrap();
            let star = star_of(1, &[0, 1, 2, 3]);
            let local = simulate_local_star(&scene, &star, &noise).unwrap();
            let gauge = local.gauge.as_ref().unwrap();
            for a in 0..4u32 {
                for b in (a + 1)..4 {
                    let (i, j) = (ImageId(a), ImageId(b));
                    let got = local.relative(i, j).unwrap().rotation;
                    let want = relative_pose(
                        &gauge.to_star_pose(scene.pose(i)),
                        &gauge.to_star_pose(scene.pose(j)),
                    )
                    .rotation;
                    errors.push(got.geodesic_to(&want));
                }
            }
        }
        let sigma = sigma_deg.to_radians();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let expected = sigma * (2.0f64).sqrt() * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mean - expected).abs() < 0.12 * sigma,
            "mean {mean}, expected {expected} over {} samples",
            errors.len()
        );
    }

    #[test]
    fn outlier_probability_one_breaks_exactly_one_member() {
        let scene = loop_scene(9);
        let star = star_of(5, &[4, 5, 6]);
        let mut noise = NoiseModel::none();
        noise.outlier_probability = 1.0;
        let local = simulate_local_star(&scene, &star, &noise).unwrap();
        let gauge = local.gauge.as_ref().unwrap();
        let broken: Vec<ImageId> = local
            .members()
            .iter()
            .copied()
            .filter(|&m| {
                let recovered = gauge.to_world_pose(local.pose(m).unwrap());
                recovered.rotation.geodesic_to(&scene.pose(m).rotation) > 1e-6
            })
            .collect();
        assert_eq!(broken.len(), 1);
        assert_ne!(broken[0], star.center);
    }

    #[test]
    fn quantized_track_observations_sit_within_a_pixel_of_truth() {
        let scene = loop_scene(5);
        let star = star_of(2, &[1, 2, 3]);
        let local = simulate_local_star(&scene, &star, &NoiseModel::none()).unwrap();
        assert!(local.tracks.len() > 30, "got {} tracks", local.tracks.len());
        let keypoints = scene_keypoints(&scene);
        for track in local.tracks.iter() {
            for obs in &track.observations {
                let (_, dist) = keypoints.nearest(obs.image, &obs.pixel).unwrap();
                // Rounding moves a projection by at most half a pixel per
                // axis.
                assert!(dist <= std::f64::consts::SQRT_2 / 2.0 + 1e-12, "dist {dist}");
            }
        }
    }

    #[test]
    fn snapped_noiseless_tracks_triangulate_to_the_surface() {
        let scene = loop_scene(5);
        let star = star_of(2, &[1, 2, 3]);
        let local = simulate_local_star(&scene, &star, &NoiseModel::none()).unwrap();
        let gauge = local.gauge.as_ref().unwrap();
        let keypoints = scene_keypoints(&scene);
        let star_points: Vec<Vector3<f64>> = scene
            .feature_points()
            .iter()
            .map(|p| (gauge.rotation.apply(p) + gauge.translation) * gauge.scale)
            .collect();
        let mut checked = 0;
        for track in local.tracks.iter().take(400) {
            // Snap each quantized observation back to its exact synthesized
            // keypoint, then midpoint-triangulate the first two rays in
            // star gauge.
            let mut rays = Vec::new();
            let mut detectors = Vec::new();
            for obs in track.observations.iter().take(2) {
                let kps = keypoints.in_image(obs.image);
                let (idx, dist) = keypoints.nearest(obs.image, &obs.pixel).unwrap();
                assert!(dist < 1.0);
                detectors.push(kps[idx].detector);
                let exact = kps[idx].position;
                let pose = local.pose(obs.image).unwrap();
                let camera = local.camera(obs.image).unwrap();
                let dir = pose.rotation.inverse().apply(&camera.normalized_ray(&exact));
                rays.push((pose.center(), dir));
            }
            if detectors[0] != detectors[1] {
                // Two features projected within half a pixel of each other:
                // snapping is genuinely ambiguous there, and the midpoint of
                // mismatched rays means nothing.
                continue;
            }
            let (c0, d0) = rays[0];
            let (c1, d1) = rays[1];
            // Closest point between the two rays.
            let (a, b, c) = (d0.dot(&d0), d0.dot(&d1), d1.dot(&d1));
            let w = c0 - c1;
            let denom = a * c - b * b;
            if denom.abs() < 1e-9 {
                continue; // near-parallel rays: the midpoint is ill-posed
            }
            let s = (b * w.dot(&d1) - c * w.dot(&d0)) / denom;
            let t = (a * w.dot(&d1) - b * w.dot(&d0)) / denom;
            let mid = ((c0 + d0 * s) + (c1 + d1 * t)) * 0.5;
            let expected = star_points[detectors[0] as usize];
            assert!(
                (mid - expected).norm() < 1e-6 * gauge.scale.max(1.0),
                "distance {}",
                (mid - expected).norm()
            );
            checked += 1;
        }
        assert!(checked > 50, "only {checked} tracks checked");
    }

    #[test]
    fn look_alike_member_is_poisoned_but_keeps_true_depth() {
        let config = SceneConfig::new(Trajectory::TwoRooms { bridge: false }, 21, 13);
        let scene = generate_scene(config).unwrap();
        let scores = candidate_scores(&scene);
        let (graph, _) = dynamic_threshold_connect(&scores, ThresholdParams::default()).unwrap();
        // Find a graph edge that crosses the rooms; it can only be a
        // look-alike pair.
        let (i, j, _) = graph
            .edges()
            .find(|&(i, j, _)| scene.is_doppelganger(i, j))
            .expect("rooms can only connect through look-alike pairs");
        let star = star_of(i.0, &[i.0, j.0]);
        let local = simulate_local_star(&scene, &star, &NoiseModel::none()).unwrap();
        let gauge = local.gauge.as_ref().unwrap();

        // The hallucinated pose is nowhere near the member's true pose...
        let recovered = gauge.to_world_pose(local.pose(j).unwrap());
        assert!((recovered.center() - scene.pose(j).center()).norm() > 5.0);
        // ...but its depth raster is its true geometry, scaled.
        let truth = scene.render_depth(j);
        let sim = local.depth(j).unwrap();
        for (a, b) in sim.values().iter().zip(truth.values()) {
            if *b > 0.0 {
                assert!((a / b - gauge.scale).abs() < 1e-9);
            }
        }
        // And the pair's similarity score sat in the look-alike band.
        let s = simulate_similarity(&scene, i, j);
        assert!((0.3..0.6).contains(&s));
    }

    #[test]
    fn classical_tracks_are_exact_and_multi_view() {
        let scene = loop_scene(2);
        let tracks = scene_classical_tracks(&scene);
        assert!(tracks.len() > 100);
        for track in tracks.iter().take(200) {
            assert!(track.len() >= 2);
            for obs in &track.observations {
                // Exact: the observation is itself a keypoint position.
                assert!(scene.camera().in_bounds(&obs.pixel));
            }
        }
    }

    #[test]
    fn bad_noise_models_are_rejected() {
        let scene = loop_scene(2);
        let star = star_of(1, &[0, 1, 2]);
        let mut noise = NoiseModel::none();
        noise.scale_jitter = (0.0, 1.0);
        assert!(matches!(
            simulate_local_star(&scene, &star, &noise),
            Err(SynthError::BadNoise(_))
        ));
        let mut noise = NoiseModel::none();
        noise.rotation_sigma_deg = -1.0;
        assert!(matches!(
            simulate_local_star(&scene, &star, &noise),
            Err(SynthError::BadNoise(_))
        ));
    }
}
