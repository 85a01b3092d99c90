//! Reconstruction scoring: per-pair pose errors, recall AUC, and the
//! windowed subsequence sampler used by the benchmark harness.
//!
//! Accuracy is measured on relative quantities so the score is independent
//! of the arbitrary gauge of either reconstruction: for every unordered
//! pair of images the estimated relative rotation and relative translation
//! direction are compared against the reference, and a pair touching an
//! image the estimate failed to register scores the worst possible angle.
//! The per-pair errors are then summarized by the exact area under the
//! recall curve up to a chosen angular threshold.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use thiserror::Error;

use crate::geom::{relative_pose, Pose};
use crate::ids::ImageId;
use crate::rng::{derive_rng, StreamDomain};

/// Fraction of the scene extent at or below which a baseline counts as
/// zero when comparing translation directions.
const BASELINE_FLOOR: f64 = 1e-9;

/// Spacing of evaluation-window centers along an image sequence, in frames.
pub const CENTER_SPACING: usize = 200;

/// Angular thresholds (degrees) at which recall AUC is reported.
pub const AUC_THRESHOLDS_DEG: [f64; 6] = [1.0, 3.0, 5.0, 10.0, 20.0, 30.0];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    /// Pairwise comparison needs at least two images registered in both
    /// reconstructions.
    #[error("only {common} image(s) registered in both reconstructions")]
    TooFewCommon { common: usize },
    /// The AUC of an empty error list is undefined.
    #[error("cannot integrate an empty error list")]
    NoErrors,
}

/// Angular errors of one unordered image pair, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairError {
    pub first: ImageId,
    pub second: ImageId,
    /// Geodesic distance between estimated and reference relative rotations.
    pub rotation: f64,
    /// Angle between estimated and reference relative translation directions.
    pub translation: f64,
}

impl PairError {
    /// The score of the pair: the worse of the two angles.
    pub fn error(&self) -> f64 {
        self.rotation.max(self.translation)
    }
}

/// Scores `estimate` against `truth`, one entry per unordered image pair.
///
/// The pair universe is drawn from the reference: every unordered pair of
/// images posed in `truth` is scored. Pairs with both images present in
/// the estimate compare relative poses — rotation by geodesic distance,
/// translation by the angle between unit baseline directions, where the
/// directions count as agreeing (error 0) when both reconstructions place
/// the pair at numerically zero baseline and as maximally wrong (error π)
/// when exactly one does. A pair with an image absent from the estimate
/// scores π outright, so dropped registrations read as worst-case errors
/// instead of silently shrinking the table.
///
/// Pairs are reported with `first < second`; the relative pose of each pair
/// is always taken in that canonical order, making the result independent
/// of any input ordering. Errors of registered pairs are invariant under a
/// global similarity transform applied to either reconstruction.
pub fn pairwise_pose_errors(
    estimate: &BTreeMap<ImageId, Pose>,
    truth: &BTreeMap<ImageId, Pose>,
) -> Result<Vec<PairError>, EvalError> {
    let common: Vec<ImageId> = truth
        .keys()
        .filter(|id| estimate.contains_key(id))
        .copied()
        .collect();
    if common.len() < 2 {
        return Err(EvalError::TooFewCommon {
            common: common.len(),
        });
    }
    // Scene scale of each side, measured over the images they share so the
    // two floors describe the same sub-scene.
    let est_floor = BASELINE_FLOOR * extent(estimate, &common);
    let truth_floor = BASELINE_FLOOR * extent(truth, &common);

    let ids: Vec<ImageId> = truth.keys().copied().collect();
    let mut out = Vec::with_capacity(ids.len() * (ids.len().saturating_sub(1)) / 2);
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let pair = match (estimate.get(&i), estimate.get(&j)) {
                (Some(est_i), Some(est_j)) => {
                    let rel_est = relative_pose(est_i, est_j);
                    let rel_truth = relative_pose(&truth[&i], &truth[&j]);
                    PairError {
                        first: i,
                        second: j,
                        rotation: rel_est.rotation.geodesic_to(&rel_truth.rotation),
                        translation: direction_angle(
                            &rel_est.translation,
                            est_floor,
                            &rel_truth.translation,
                            truth_floor,
                        ),
                    }
                }
                _ => PairError {
                    first: i,
                    second: j,
                    rotation: PI,
                    translation: PI,
                },
            };
            out.push(pair);
        }
    }
    Ok(out)
}

/// Largest camera-center distance among the listed images.
fn extent(poses: &BTreeMap<ImageId, Pose>, ids: &[ImageId]) -> f64 {
    let centers: Vec<Vector3<f64>> = ids.iter().map(|id| poses[id].center()).collect();
    let mut best = 0.0_f64;
    for (a, ca) in centers.iter().enumerate() {
        for cb in &centers[a + 1..] {
            best = best.max((ca - cb).norm());
        }
    }
    best
}

/// Angle between two translation directions under the zero-baseline
/// convention: agreement on "no baseline" scores 0, disagreement scores π.
fn direction_angle(est: &Vector3<f64>, est_floor: f64, truth: &Vector3<f64>, truth_floor: f64) -> f64 {
    let est_tiny = est.norm() <= est_floor;
    let truth_tiny = truth.norm() <= truth_floor;
    match (est_tiny, truth_tiny) {
        (true, true) => 0.0,
        (true, false) | (false, true) => PI,
        (false, false) => {
            let u = est.normalize();
            let v = truth.normalize();
            u.cross(&v).norm().atan2(u.dot(&v))
        }
    }
}

/// Area under the recall curve of `errors` up to `threshold_deg` degrees,
/// scaled to `[0, 100]`.
///
/// Recall at angle `t` is the fraction of errors strictly below `t`. Its
/// mean over `(0, X]` has the closed form `Σ max(0, X − eₖ) / (N·X)`,
/// which is evaluated here exactly — no numeric integration is involved.
/// Errors are radians; the threshold is degrees.
///
/// The threshold must be positive. An empty error list is rejected.
pub fn auc_at(errors: &[f64], threshold_deg: f64) -> Result<f64, EvalError> {
    assert!(threshold_deg > 0.0, "AUC threshold must be positive");
    if errors.is_empty() {
        return Err(EvalError::NoErrors);
    }
    let x = threshold_deg.to_radians();
    // Summing in sorted order makes the result independent of how the
    // caller happened to arrange the list.
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().map(|&e| (x - e).max(0.0)).sum();
    Ok(100.0 * sum / (sorted.len() as f64 * x))
}

/// One evaluation window: `length` frames taken every `stride` frames,
/// centered on frame `center`.
///
/// Windows produced by [`sample_subsequences`] always lie fully inside the
/// sequence, so `start`/`end`/`frames` cannot underflow on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsequenceWindow {
    pub center: usize,
    pub stride: usize,
    pub length: usize,
}

impl SubsequenceWindow {
    /// First frame of the window.
    pub fn start(&self) -> usize {
        self.center - self.stride * (self.length - 1) / 2
    }

    /// Last frame of the window (inclusive).
    pub fn end(&self) -> usize {
        self.start() + self.stride * (self.length - 1)
    }

    /// The frame indices of the window, in order.
    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        let start = self.start();
        (0..self.length).map(move |k| start + k * self.stride)
    }
}

/// Evaluation windows for a sequence of `length` frames.
///
/// One center frame is drawn per 200-frame block of the sequence (seeded,
/// so the layout is reproducible), and each center carries a grid of
/// windows at three temporal densities: consecutive frames in lengths
/// {4, 8, 16, 32, 64, 128}, every second frame in {4, …, 64}, and every
/// fourth frame in {4, …, 32}. A window that would cross either end of the
/// sequence is dropped rather than clipped, so every returned window has
/// exactly its nominal shape. Sequences shorter than the smallest window
/// yield no windows.
pub fn sample_subsequences(length: usize, seed: u64) -> Vec<SubsequenceWindow> {
    const GRID: [(usize, &[usize]); 3] = [
        (1, &[4, 8, 16, 32, 64, 128]),
        (2, &[4, 8, 16, 32, 64]),
        (4, &[4, 8, 16, 32]),
    ];
    let mut rng = derive_rng(seed, StreamDomain::Subsequences, 0);
    let mut out = Vec::new();
    let mut block = 0;
    while block < length {
        let span = CENTER_SPACING.min(length - block);
        let center = block + rng.gen_range(0..span);
        for &(stride, lengths) in &GRID {
            for &window in lengths {
                let half = stride * (window - 1) / 2;
                let reach = stride * (window - 1) - half;
                if center >= half && center + reach < length {
                    out.push(SubsequenceWindow {
                        center,
                        stride,
                        length: window,
                    });
                }
            }
        }
        block += CENTER_SPACING;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A small rig with distinct rotations and centers per camera.
    fn rig(n: u32) -> BTreeMap<ImageId, Pose> {
        (0..n)
            .map(|k| {
                let f = k as f64;
                let rotation = Rotation::from_axis_angle(
                    &Vector3::new(0.2 + f, 1.0 - 0.3 * f, -0.5 + 0.1 * f),
                    0.3 + 0.25 * f,
                );
                let center = Vector3::new(f, (0.7 * f).sin(), 0.4 * f * f - 1.0);
                (ImageId(k), Pose::from_rotation_center(rotation, center))
            })
            .collect()
    }

    /// Independent per-pair recomputation used to cross-check the table:
    /// rotation angle through the quaternion dot product, translation angle
    /// through a clamped arccosine of unit directions.
    fn direct_pair_error(
        est: &BTreeMap<ImageId, Pose>,
        truth: &BTreeMap<ImageId, Pose>,
        i: ImageId,
        j: ImageId,
    ) -> (f64, f64) {
        let rel = |p: &BTreeMap<ImageId, Pose>| {
            let r = p[&j].rotation.compose(&p[&i].rotation.inverse());
            let t = p[&j].rotation.apply(&(p[&i].center() - p[&j].center()));
            (r, t)
        };
        let (re, te) = rel(est);
        let (rt, tt) = rel(truth);
        let qe = re.quaternion_wxyz();
        let qt = rt.quaternion_wxyz();
        let dot: f64 = qe.iter().zip(&qt).map(|(a, b)| a * b).sum();
        let rot = 2.0 * dot.abs().clamp(-1.0, 1.0).acos();
        let tra = (te.normalize().dot(&tt.normalize())).clamp(-1.0, 1.0).acos();
        (rot, tra)
    }

    #[test]
    fn identical_reconstructions_score_exactly_zero() {
        let truth = rig(6);
        let errors = pairwise_pose_errors(&truth, &truth).unwrap();
        assert_eq!(errors.len(), 15);
        for e in &errors {
            // Identical inputs leave only sub-ulp rounding residue.
            assert!(e.rotation < 1e-15);
            assert!(e.translation < 1e-15);
            assert!(e.error() < 1e-15);
        }
    }

    #[test]
    fn a_five_degree_rotation_taints_exactly_its_own_pairs() {
        let truth = rig(6);
        let twist = Rotation::from_axis_angle(&Vector3::new(0.3, -1.0, 0.8), 5.0_f64.to_radians());
        let mut estimate = truth.clone();
        let tainted = ImageId(2);
        let p = estimate[&tainted];
        estimate.insert(
            tainted,
            Pose::from_rotation_center(twist.compose(&p.rotation), p.center()),
        );

        let errors = pairwise_pose_errors(&estimate, &truth).unwrap();
        for e in &errors {
            let touched = e.first == tainted || e.second == tainted;
            if touched {
                // Conjugation preserves the twist angle, so the rotation
                // error is the full five degrees on every touched pair; the
                // induced direction change can only be smaller.
                assert!((e.rotation - 5.0_f64.to_radians()).abs() < 1e-12);
                assert!(e.translation <= e.rotation + 1e-12);
                assert!((e.error() - 5.0_f64.to_radians()).abs() < 1e-12);
            } else {
                assert!(e.error() < 1e-15);
            }
            // Cross-check against the independent formulas.
            let (rot, tra) = direct_pair_error(&estimate, &truth, e.first, e.second);
            assert!((e.rotation - rot).abs() < 1e-6);
            assert!((e.translation - tra).abs() < 1e-6);
        }
    }

    #[test]
    fn pairs_with_an_unregistered_image_score_pi() {
        let truth = rig(5);
        let mut estimate = truth.clone();
        estimate.remove(&ImageId(3));

        let errors = pairwise_pose_errors(&estimate, &truth).unwrap();
        assert_eq!(errors.len(), 10);
        for e in &errors {
            if e.first == ImageId(3) || e.second == ImageId(3) {
                assert_eq!(e.error(), PI);
            } else {
                assert!(e.error() < 1e-15);
            }
        }
    }

    #[test]
    fn errors_are_invariant_under_a_similarity_gauge_change() {
        let truth = rig(7);
        let mut estimate = truth.clone();
        // Leave a genuine error in place so invariance is tested on
        // non-trivial values.
        let p = estimate[&ImageId(4)];
        let twist = Rotation::from_axis_angle(&Vector3::new(1.0, 0.2, -0.4), 0.03);
        estimate.insert(
            ImageId(4),
            Pose::from_rotation_center(twist.compose(&p.rotation), p.center() + Vector3::new(0.02, -0.01, 0.03)),
        );
        let before = pairwise_pose_errors(&estimate, &truth).unwrap();

        // Re-express the estimate in a rotated, shifted, rescaled world.
        let gauge_rot = Rotation::from_axis_angle(&Vector3::new(0.5, -1.0, 2.0), 1.234);
        let gauge_shift = Vector3::new(10.0, -4.0, 2.5);
        let scale = 2.37;
        let transformed: BTreeMap<ImageId, Pose> = estimate
            .iter()
            .map(|(&id, pose)| {
                let rotation = pose.rotation.compose(&gauge_rot.inverse());
                let center = scale * gauge_rot.apply(&pose.center()) + gauge_shift;
                (id, Pose::from_rotation_center(rotation, center))
            })
            .collect();
        let after = pairwise_pose_errors(&transformed, &truth).unwrap();

        assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            assert_eq!((b.first, b.second), (a.first, a.second));
            assert!((b.rotation - a.rotation).abs() < 1e-10);
            assert!((b.translation - a.translation).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_baselines_follow_the_agree_or_punish_convention() {
        // Two cameras share a center; a third sits well apart.
        let mut truth = BTreeMap::new();
        truth.insert(ImageId(0), Pose::from_rotation_center(Rotation::identity(), Vector3::zeros()));
        truth.insert(
            ImageId(1),
            Pose::from_rotation_center(
                Rotation::from_axis_angle(&Vector3::new(0.0, 0.0, 1.0), 0.4),
                Vector3::zeros(),
            ),
        );
        truth.insert(ImageId(2), Pose::from_rotation_center(Rotation::identity(), Vector3::new(3.0, 1.0, 0.0)));

        // Estimate agrees on everything: the coincident pair scores zero.
        let agree = pairwise_pose_errors(&truth, &truth).unwrap();
        let pair01 = agree.iter().find(|e| e.second == ImageId(1)).unwrap();
        assert_eq!(pair01.translation, 0.0);

        // Sub-floor drift still counts as agreement on "no baseline".
        let mut drifted = truth.clone();
        let p = drifted[&ImageId(1)];
        drifted.insert(
            ImageId(1),
            Pose::from_rotation_center(p.rotation, Vector3::new(1e-13, 0.0, 0.0)),
        );
        let near = pairwise_pose_errors(&drifted, &truth).unwrap();
        let pair01 = near.iter().find(|e| e.second == ImageId(1)).unwrap();
        assert_eq!(pair01.translation, 0.0);

        // A real baseline where the reference has none is maximally wrong.
        let mut split = truth.clone();
        let p = split[&ImageId(1)];
        split.insert(
            ImageId(1),
            Pose::from_rotation_center(p.rotation, Vector3::new(0.5, 0.0, 0.0)),
        );
        let far = pairwise_pose_errors(&split, &truth).unwrap();
        let pair01 = far.iter().find(|e| e.second == ImageId(1)).unwrap();
        assert_eq!(pair01.translation, PI);
    }

    #[test]
    fn too_few_common_images_are_rejected() {
        let truth = rig(4);
        let empty = BTreeMap::new();
        assert_eq!(
            pairwise_pose_errors(&empty, &truth),
            Err(EvalError::TooFewCommon { common: 0 })
        );

        let mut one: BTreeMap<ImageId, Pose> = BTreeMap::new();
        one.insert(ImageId(1), truth[&ImageId(1)]);
        assert_eq!(
            pairwise_pose_errors(&one, &truth),
            Err(EvalError::TooFewCommon { common: 1 })
        );
    }

    #[test]
    fn auc_closed_forms() {
        let x = 5.0;
        let zeros = [0.0; 4];
        assert!((auc_at(&zeros, x).unwrap() - 100.0).abs() < 1e-12);

        let beyond = [x.to_radians() * 1.01, 1.0, 2.0];
        assert_eq!(auc_at(&beyond, x).unwrap(), 0.0);

        let half = [x.to_radians() / 2.0];
        assert!((auc_at(&half, x).unwrap() - 50.0).abs() < 1e-12);

        assert_eq!(auc_at(&[], x), Err(EvalError::NoErrors));
    }

    #[test]
    #[should_panic(expected = "threshold must be positive")]
    fn auc_rejects_a_nonpositive_threshold() {
        let _ = auc_at(&[0.1], 0.0);
    }

    #[test]
    fn auc_is_monotone_in_the_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let errors: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..0.8)).collect();
            let mut last = 0.0;
            for t in AUC_THRESHOLDS_DEG {
                let auc = auc_at(&errors, t).unwrap();
                assert!(auc >= last - 1e-12, "AUC fell from {last} to {auc} at {t}");
                assert!((0.0..=100.0).contains(&auc));
                last = auc;
            }
        }
    }

    #[test]
    fn auc_matches_a_million_sample_integration_of_the_recall_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x_deg = 10.0_f64;
        let x = x_deg.to_radians();
        let mut errors: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.5 * x)).collect();
        errors.push(0.0);
        errors.push(2.0 * x);

        // Midpoint evaluation of recall(t) on a million-point grid.
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        const SAMPLES: usize = 1_000_000;
        let mut below = 0usize;
        let mut acc = 0.0f64;
        for m in 0..SAMPLES {
            let t = (m as f64 + 0.5) * x / SAMPLES as f64;
            while below < sorted.len() && sorted[below] < t {
                below += 1;
            }
            acc += below as f64 / sorted.len() as f64;
        }
        let reference = 100.0 * acc / SAMPLES as f64;

        let exact = auc_at(&errors, x_deg).unwrap();
        assert!(
            (exact - reference).abs() < 1e-3,
            "exact {exact} vs sampled {reference}"
        );
    }

    #[test]
    fn windows_lie_inside_the_sequence_and_respect_the_grid() {
        for seed in 0..12 {
            for length in [10, 50, 199, 200, 450, 1000] {
                for w in sample_subsequences(length, seed) {
                    assert!(w.center >= w.stride * (w.length - 1) / 2);
                    assert!(w.end() < length);
                    assert_eq!(w.frames().count(), w.length);
                    match w.stride {
                        1 => assert!([4, 8, 16, 32, 64, 128].contains(&w.length)),
                        2 => assert!([4, 8, 16, 32, 64].contains(&w.length)),
                        4 => assert!([4, 8, 16, 32].contains(&w.length)),
                        other => panic!("unexpected stride {other}"),
                    }
                }
            }
        }
    }

    #[test]
    fn quarter_stride_windows_never_reach_sixty_four() {
        for seed in 0..20 {
            let all = sample_subsequences(4000, seed);
            assert!(all
                .iter()
                .filter(|w| w.stride == 4)
                .all(|w| w.length <= 32));
        }
    }

    #[test]
    fn one_center_per_two_hundred_frame_block() {
        let windows = sample_subsequences(1000, 9);
        let mut centers: Vec<usize> = windows.iter().map(|w| w.center).collect();
        centers.dedup();
        assert_eq!(centers.len(), 5);
        for (k, c) in centers.iter().enumerate() {
            assert!((k * 200..(k + 1) * 200).contains(c));
        }
    }

    #[test]
    fn a_short_sequence_keeps_one_center_with_only_fitting_windows() {
        // Seed 3 places the single sub-200 center at frame 35. By hand: a
        // window of stride s and length L spans s·(L−1)+1 frames around the
        // center, so at frame 35 of 100 the consecutive lengths 4–64 fit
        // (128 would need 63 frames of headroom), stride 2 fits 4–32, and
        // stride 4 fits 4–16.
        let windows = sample_subsequences(100, 3);
        let centers: Vec<usize> = {
            let mut c: Vec<usize> = windows.iter().map(|w| w.center).collect();
            c.dedup();
            c
        };
        assert_eq!(centers, [35]);
        let shapes: Vec<(usize, usize)> = windows.iter().map(|w| (w.stride, w.length)).collect();
        assert_eq!(
            shapes,
            [
                (1, 4),
                (1, 8),
                (1, 16),
                (1, 32),
                (1, 64),
                (2, 4),
                (2, 8),
                (2, 16),
                (2, 32),
                (4, 4),
                (4, 8),
                (4, 16),
            ]
        );
    }

    #[test]
    fn a_four_hundred_frame_sequence_carries_two_full_window_grids() {
        // Seed 1 draws centers 107 and 212 — both at least 63 frames from
        // either end, so every window shape fits and nothing is dropped.
        let windows = sample_subsequences(400, 1);
        let centers: Vec<usize> = {
            let mut c: Vec<usize> = windows.iter().map(|w| w.center).collect();
            c.dedup();
            c
        };
        assert_eq!(centers, [107, 212]);
        assert_eq!(windows.len(), 30);
        let full_grid: Vec<(usize, usize)> = [
            (1usize, [4usize, 8, 16, 32, 64, 128].as_slice()),
            (2, &[4, 8, 16, 32, 64]),
            (4, &[4, 8, 16, 32]),
        ]
        .iter()
        .flat_map(|&(s, ls)| ls.iter().map(move |&l| (s, l)))
        .collect();
        for c in centers {
            let shapes: Vec<(usize, usize)> = windows
                .iter()
                .filter(|w| w.center == c)
                .map(|w| (w.stride, w.length))
                .collect();
            assert_eq!(shapes, full_grid);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        assert_eq!(sample_subsequences(700, 5), sample_subsequences(700, 5));
        let a: Vec<usize> = sample_subsequences(700, 5).iter().map(|w| w.center).collect();
        let b: Vec<usize> = sample_subsequences(700, 6).iter().map(|w| w.center).collect();
        assert_ne!(a, b);
    }
}
