//! Keypoint snapping, cross-star track merging, and priority mixing.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::ids::ImageId;
use crate::viewgraph::UnionFind;

use super::{KeypointSet, Observation, Track, TrackClass, TrackSet};

/// Default snap radius in pixels.
pub const DEFAULT_SNAP_RADIUS: f64 = 1.0;

/// Default per-pair match budget for mixing: a pair covered by this many
/// admitted tracks accepts no further low-priority tracks.
pub const DEFAULT_PAIR_BUDGET: usize = 512;

/// Identity of one stored keypoint: its image and its index in that image's
/// keypoint list.
type KeypointKey = (ImageId, usize);

/// A track whose observations have been pulled onto keypoints where one lies
/// within the snap radius.
struct SnappedTrack {
    class: TrackClass,
    /// Each observation paired with the keypoint it landed on, if any.
    observations: Vec<(Observation, Option<KeypointKey>)>,
}

/// Snaps every observation to its nearest keypoint within `beta` pixels and
/// merges tracks that land on a shared keypoint.
///
/// The input is one track set per star together with that star's overlap
/// weight. Observation confidences are multiplied by the star weight, and
/// when merged tracks observe the same image more than once, the sighting
/// with the higher confidence is kept (ties keep the earlier star's).
/// Observations with no keypoint within the radius keep their position and
/// never cause a merge. Output points are cleared: snapped positions
/// invalidate any earlier triangulation.
///
/// Running the function on its own output (as a single group with weight 1)
/// reproduces it exactly: positions already sit on keypoints, confidences
/// are unchanged, and merged tracks share no keys.
pub fn snap_and_merge(
    per_star: &[(f64, &TrackSet)],
    keypoints: &KeypointSet,
    beta: f64,
) -> TrackSet {
    assert!(beta > 0.0, "snap radius must be positive, got {beta}");

    let mut snapped: Vec<SnappedTrack> = Vec::new();
    for &(weight, set) in per_star {
        for track in set.iter() {
            let observations = track
                .observations
                .iter()
                .map(|obs| {
                    let mut obs = *obs;
                    obs.weight *= weight;
                    let key = keypoints
                        .nearest(obs.image, &obs.pixel)
                        .filter(|&(_, dist)| dist <= beta)
                        .map(|(index, _)| {
                            obs.pixel = keypoints.in_image(obs.image)[index].position;
                            (obs.image, index)
                        });
                    (obs, key)
                })
                .collect();
            snapped.push(SnappedTrack { class: track.class, observations });
        }
    }

    // Tracks sharing a keypoint belong to the same output track.
    let mut uf = UnionFind::new(snapped.len());
    let mut first_owner: BTreeMap<KeypointKey, usize> = BTreeMap::new();
    for (index, track) in snapped.iter().enumerate() {
        for (_, key) in &track.observations {
            if let Some(key) = key {
                match first_owner.get(key) {
                    Some(&owner) => {
                        uf.union(owner, index);
                    }
                    None => {
                        first_owner.insert(*key, index);
                    }
                }
            }
        }
    }

    // Emit one track per merge class, ordered by each class's earliest
    // input track.
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for index in 0..snapped.len() {
        let root = uf.find(index);
        by_root.entry(root).or_default().push(index);
    }
    let mut classes: Vec<Vec<usize>> = by_root.into_values().collect();
    classes.sort_by_key(|members| members[0]);

    let mut out = TrackSet::new();
    for members in classes {
        let class = members
            .iter()
            .map(|&k| snapped[k].class)
            .min()
            .expect("merge classes are non-empty");
        let mut per_image: BTreeMap<ImageId, Observation> = BTreeMap::new();
        for &k in &members {
            for (obs, _) in &snapped[k].observations {
                per_image
                    .entry(obs.image)
                    .and_modify(|kept| {
                        if obs.weight > kept.weight {
                            *kept = *obs;
                        }
                    })
                    .or_insert(*obs);
            }
        }
        let observations: Vec<Observation> = per_image.into_values().collect();
        out.push(
            Track::new(class, observations, None)
                .expect("a merge class covers at least one input track's two images"),
        );
    }
    out
}

/// Canonical mixing order: longer tracks first, ties broken by the image
/// list, then by pixel coordinates, so the result is independent of input
/// container order.
fn mixing_order(a: &Track, b: &Track) -> Ordering {
    b.len()
        .cmp(&a.len())
        .then_with(|| {
            let ai = a.observations.iter().map(|o| o.image);
            let bi = b.observations.iter().map(|o| o.image);
            ai.cmp(bi)
        })
        .then_with(|| {
            for (oa, ob) in a.observations.iter().zip(&b.observations) {
                let ord = oa
                    .pixel
                    .x
                    .total_cmp(&ob.pixel.x)
                    .then(oa.pixel.y.total_cmp(&ob.pixel.y));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        })
}

fn sorted_refs(set: &TrackSet) -> Vec<&Track> {
    let mut refs: Vec<&Track> = set.iter().collect();
    refs.sort_by(|a, b| mixing_order(a, b));
    refs
}

/// Combines the three track sources by priority under a per-pair budget.
///
/// Every track from `classical` is admitted unconditionally. Feedforward
/// tracks are then admitted if and only if at least one image pair they span
/// still holds fewer than `pair_budget` matches, and the same rule is applied
/// to virtual tracks last. Pair counts update as tracks are admitted. Within
/// each source, tracks are visited longest first (ties by first image id,
/// then a fixed total order), so the output does not depend on how the
/// inputs happened to be ordered.
pub fn mix_tracks(
    classical: &TrackSet,
    feedforward: &TrackSet,
    virtual_tracks: &TrackSet,
    pair_budget: usize,
) -> TrackSet {
    assert!(pair_budget > 0, "pair budget must be positive");

    let mut counts: BTreeMap<(ImageId, ImageId), usize> = BTreeMap::new();
    let mut out = TrackSet::new();
    let mut admit = |track: &Track, counts: &mut BTreeMap<(ImageId, ImageId), usize>| {
        for pair in track.image_pairs() {
            *counts.entry(pair).or_insert(0) += 1;
        }
        out.push(track.clone());
    };

    for track in sorted_refs(classical) {
        admit(track, &mut counts);
    }
    for source in [feedforward, virtual_tracks] {
        for track in sorted_refs(source) {
            let undercovered = track
                .image_pairs()
                .any(|pair| counts.get(&pair).copied().unwrap_or(0) < pair_budget);
            if undercovered {
                admit(track, &mut counts);
            }
        }
    }
    out
}
