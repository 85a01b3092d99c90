//! Track, observation and keypoint containers.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::ids::ImageId;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("a track needs at least two observations, got {0}")]
    TooFewObservations(usize),
    #[error("image {0} observed more than once in one track")]
    DuplicateImage(ImageId),
    #[error("virtual tracks must carry a 3D point")]
    MissingPoint,
}

/// Where a track came from, which decides its robust loss and its priority
/// during mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrackClass {
    /// Detector-and-matcher correspondences; highest mixing priority.
    Classical,
    /// Correspondences reported by the per-star local reconstruction.
    Feedforward,
    /// Synthesized from a depth-lifted pixel, reprojected through the local
    /// relative poses of its star.
    VirtualLocal,
    /// Synthesized from a depth-lifted pixel, reprojected through the
    /// current global poses.
    VirtualGlobal,
}

impl TrackClass {
    /// Virtual tracks encode priors: their points are fixed during bundle
    /// adjustment and their loss saturates instead of growing.
    pub fn is_virtual(self) -> bool {
        matches!(self, TrackClass::VirtualLocal | TrackClass::VirtualGlobal)
    }
}

/// A single 2D sighting of a track in one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: ImageId,
    pub pixel: Vector2<f64>,
    /// Confidence used only when merging duplicate observations of one
    /// image; the better-supported sighting wins. 1.0 when unknown.
    pub weight: f64,
}

impl Observation {
    pub fn new(image: ImageId, pixel: Vector2<f64>) -> Self {
        Observation { image, pixel, weight: 1.0 }
    }
}

/// One scene point seen in two or more images.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub class: TrackClass,
    /// Sorted by image id; at most one observation per image.
    pub observations: Vec<Observation>,
    /// Known by construction for virtual tracks; for the rest, filled by
    /// triangulation.
    pub point: Option<Vector3<f64>>,
}

impl Track {
    /// Builds a track, sorting observations by image id and enforcing the
    /// container invariants.
    pub fn new(
        class: TrackClass,
        mut observations: Vec<Observation>,
        point: Option<Vector3<f64>>,
    ) -> Result<Self, TrackError> {
        if observations.len() < 2 {
            return Err(TrackError::TooFewObservations(observations.len()));
        }
        observations.sort_by_key(|o| o.image);
        for pair in observations.windows(2) {
            if pair[0].image == pair[1].image {
                return Err(TrackError::DuplicateImage(pair[0].image));
            }
        }
        if class.is_virtual() && point.is_none() {
            return Err(TrackError::MissingPoint);
        }
        Ok(Track { class, observations, point })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Images this track spans, ascending.
    pub fn images(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.observations.iter().map(|o| o.image)
    }

    /// All unordered image pairs this track connects, `i < j`.
    pub fn image_pairs(&self) -> impl Iterator<Item = (ImageId, ImageId)> + '_ {
        let n = self.observations.len();
        (0..n).flat_map(move |a| {
            ((a + 1)..n).map(move |b| (self.observations[a].image, self.observations[b].image))
        })
    }

    pub fn observation_of(&self, image: ImageId) -> Option<&Observation> {
        self.observations
            .binary_search_by_key(&image, |o| o.image)
            .ok()
            .map(|k| &self.observations[k])
    }
}

/// An ordered collection of tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn new() -> Self {
        TrackSet { tracks: Vec::new() }
    }

    pub fn from_tracks(tracks: Vec<Track>) -> Self {
        TrackSet { tracks }
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter()
    }

    pub fn push(&mut self, track: Track) {
        self.tracks.push(track);
    }

    /// Total observation count over all tracks.
    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }
}

/// A detected (or synthesized) interest point in one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub image: ImageId,
    pub position: Vector2<f64>,
    /// Stable identifier from the detector that produced it.
    pub detector: u32,
}

/// Keypoints grouped per image, supporting nearest-neighbor queries for
/// snapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet {
    by_image: std::collections::BTreeMap<ImageId, Vec<Keypoint>>,
}

impl KeypointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, keypoint: Keypoint) {
        self.by_image.entry(keypoint.image).or_default().push(keypoint);
    }

    pub fn in_image(&self, image: ImageId) -> &[Keypoint] {
        self.by_image.get(&image).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.values().all(Vec::is_empty)
    }

    pub fn images(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.by_image.keys().copied()
    }

    /// Closest keypoint to `pixel` in `image` and its distance. Ties go to
    /// the keypoint stored first, which is deterministic because insertion
    /// order is.
    pub fn nearest(&self, image: ImageId, pixel: &Vector2<f64>) -> Option<(usize, f64)> {
        let points = self.in_image(image);
        let mut best: Option<(usize, f64)> = None;
        for (k, kp) in points.iter().enumerate() {
            let d = (kp.position - pixel).norm();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best
    }
}
