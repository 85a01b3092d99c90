//! Global motion averaging: merges per-star local reconstructions into one
//! global frame via median intrinsics, robust rotation averaging, and
//! similarity averaging with one scale per star, followed by depth
//! rescaling.

mod rotation;
mod similarity;

pub use rotation::{rotation_averaging, RotationConfig, RotationSolution};
pub use similarity::{
    similarity_averaging, similarity_averaging_variant, SimilarityConfig, SimilaritySolution,
};

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::Rotation;
use crate::ids::{CameraId, ImageId};
use crate::overlap::OverlapResult;
use crate::synth::LocalStarReconstruction;

#[derive(Debug, Error)]
pub enum AveragingError {
    #[error("no measurements to average")]
    NoMeasurements,
    #[error("measurement graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("no rotation estimate for image {0}")]
    MissingRotation(ImageId),
    #[error("no focal observations for camera {0}")]
    NoFocalObservations(CameraId),
    #[error("no scale for star {0}")]
    MissingScale(ImageId),
    #[error("scale {0} is not positive")]
    BadScale(f64),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("invalid measurement: {0}")]
    BadMeasurement(String),
    #[error("solver failed: {0}")]
    SolverFailure(String),
}

/// One relative pose between two images, measured inside one star's gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeMeasurement {
    /// Center image of the star the measurement came from.
    pub star: ImageId,
    pub i: ImageId,
    pub j: ImageId,
    /// Relative rotation mapping image-`i` coordinates into image-`j`
    /// coordinates.
    pub rotation: Rotation,
    /// Relative translation in the star's own (scaled) units.
    pub translation: Vector3<f64>,
    /// Transitive overlap of the pair inside this star, in `[0, 1]`.
    pub weight: f64,
}

/// Extracts the averaging measurement set from local reconstructions: every
/// within-star pair whose transitive overlap reaches `min_overlap`, with the
/// overlap as weight. `registered` restricts the pairs to a subset of
/// images; `None` admits all members.
pub fn collect_measurements(
    stars: &[LocalStarReconstruction],
    overlaps: &[OverlapResult],
    min_overlap: f64,
    registered: Option<&BTreeSet<ImageId>>,
) -> Vec<RelativeMeasurement> {
    let by_star: BTreeMap<ImageId, &OverlapResult> =
        overlaps.iter().map(|o| (o.star, o)).collect();
    let mut measurements = Vec::new();
    for star in stars {
        let Some(overlap) = by_star.get(&star.center()) else { continue };
        let members = star.members();
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate().skip(a + 1) {
                if let Some(keep) = registered {
                    if !keep.contains(&i) || !keep.contains(&j) {
                        continue;
                    }
                }
                let o = overlap.transitive[a][b];
                if o < min_overlap {
                    continue;
                }
                let rel = star.relative(i, j).expect("members carry poses");
                measurements.push(RelativeMeasurement {
                    star: star.center(),
                    i,
                    j,
                    rotation: rel.rotation,
                    translation: rel.translation,
                    weight: o,
                });
            }
        }
    }
    measurements
}

/// Rejects structurally invalid measurements (self pairs, weights outside
/// `[0, 1]`, non-finite translations).
pub(crate) fn validate_measurements(
    measurements: &[RelativeMeasurement],
) -> Result<(), AveragingError> {
    for m in measurements {
        if m.i == m.j {
            return Err(AveragingError::BadMeasurement(format!(
                "self pair ({}, {}) in star {}",
                m.i, m.j, m.star
            )));
        }
        if !(m.weight.is_finite() && (0.0..=1.0).contains(&m.weight)) {
            return Err(AveragingError::BadMeasurement(format!(
                "weight {} of pair ({}, {}) is outside [0, 1]",
                m.weight, m.i, m.j
            )));
        }
        if !m.translation.iter().all(|v| v.is_finite()) {
            return Err(AveragingError::BadMeasurement(format!(
                "translation of pair ({}, {}) is not finite",
                m.i, m.j
            )));
        }
    }
    Ok(())
}

/// Zero-weight measurements contribute nothing to any objective, so the
/// solvers drop them up front; this keeps connectivity honest too.
pub(crate) fn positive_weight(m: &RelativeMeasurement) -> bool {
    m.weight > 0.0
}

/// Sorted set of images touched by the measurements.
pub(crate) fn measurement_images(measurements: &[RelativeMeasurement]) -> Vec<ImageId> {
    let mut set = BTreeSet::new();
    for m in measurements {
        set.insert(m.i);
        set.insert(m.j);
    }
    set.into_iter().collect()
}

/// Union-find connectivity over the measurement graph; returns the number
/// of components.
pub(crate) fn measurement_components(
    images: &[ImageId],
    measurements: &[RelativeMeasurement],
) -> usize {
    let index: BTreeMap<ImageId, usize> =
        images.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut parent: Vec<usize> = (0..images.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = images.len();
    for m in measurements {
        let (a, b) = (index[&m.i], index[&m.j]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components
}

/// Indices of the measurements forming a maximum-weight spanning tree of
/// the measurement graph (Kruskal; ties broken by ids so the tree is
/// reproducible). Assumes a connected graph.
pub(crate) fn maximum_spanning_tree(
    images: &[ImageId],
    measurements: &[RelativeMeasurement],
) -> Vec<usize> {
    let index: BTreeMap<ImageId, usize> =
        images.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut order: Vec<usize> = (0..measurements.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&measurements[a], &measurements[b]);
        mb.weight
            .total_cmp(&ma.weight)
            .then_with(|| (ma.i, ma.j, ma.star).cmp(&(mb.i, mb.j, mb.star)))
    });
    let mut parent: Vec<usize> = (0..images.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(images.len().saturating_sub(1));
    for m in order {
        let (a, b) = (index[&measurements[m].i], index[&measurements[m].j]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            tree.push(m);
            if tree.len() + 1 == images.len() {
                break;
            }
        }
    }
    tree
}

/// Median of all focal observations per physical camera, over every member
/// of every star. Even observation counts take the mean of the two middle
/// values. `grouping` maps each image to its physical camera and defines
/// which cameras must be covered.
pub fn average_intrinsics_grouped(
    stars: &[LocalStarReconstruction],
    grouping: &BTreeMap<ImageId, CameraId>,
) -> Result<BTreeMap<CameraId, f64>, AveragingError> {
    let mut observations: BTreeMap<CameraId, Vec<f64>> =
        grouping.values().map(|&c| (c, Vec::new())).collect();
    for star in stars {
        for (&image, &focal) in &star.focals {
            if let Some(&camera) = grouping.get(&image) {
                observations.get_mut(&camera).expect("camera registered above").push(focal);
            }
        }
    }
    let mut medians = BTreeMap::new();
    for (camera, mut values) in observations {
        if values.is_empty() {
            return Err(AveragingError::NoFocalObservations(camera));
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };
        medians.insert(camera, median);
    }
    Ok(medians)
}

/// [`average_intrinsics_grouped`] with the default one-camera-per-image
/// grouping.
pub fn average_intrinsics(
    stars: &[LocalStarReconstruction],
) -> Result<BTreeMap<CameraId, f64>, AveragingError> {
    let mut grouping = BTreeMap::new();
    for star in stars {
        for &image in star.focals.keys() {
            grouping.insert(image, CameraId(image.0));
        }
    }
    average_intrinsics_grouped(stars, &grouping)
}

/// Divides every depth raster of every star by its star's scale, making
/// the rasters globally scale-consistent. Invalid pixels stay invalid.
pub fn rescale_depths(
    stars: &mut [LocalStarReconstruction],
    scales: &BTreeMap<ImageId, f64>,
) -> Result<(), AveragingError> {
    for star in stars.iter_mut() {
        let &s = scales.get(&star.center()).ok_or(AveragingError::MissingScale(star.center()))?;
        if !(s.is_finite() && s > 0.0) {
            return Err(AveragingError::BadScale(s));
        }
        for depth in star.depths.values_mut() {
            *depth = depth.rescaled(s).expect("scale validated above");
        }
    }
    Ok(())
}
