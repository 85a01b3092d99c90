//! Depth-consistency overlap: forward-backward reprojection within a star,
//! transitive co-visibility, and overlap-based view-graph edge filtering.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::ids::ImageId;
use crate::par::parallel_map;
use crate::synth::LocalStarReconstruction;
use crate::viewgraph::ViewGraph;

/// Reprojection threshold in pixels under which a forward-backward sample
/// counts as consistent.
pub const DEFAULT_TAU: f64 = 3.0;
/// Pixel-grid stride for overlap sampling.
pub const DEFAULT_STRIDE: u32 = 4;
/// Edges whose transitive overlap falls below this are filter candidates.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.05;

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error("invalid overlap parameters: {0}")]
    BadParams(String),
    #[error("view graph is disconnected")]
    Disconnected,
}

/// Per-star overlap ratios between the star's members.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapResult {
    /// The star's center image, which identifies the star.
    pub star: ImageId,
    /// Sorted member ids; both matrices are indexed by position here.
    pub members: Vec<ImageId>,
    /// Reprojection threshold the ratios were computed with.
    pub tau: f64,
    /// Directional raw ratios; `raw[a][b]` checks member `a`'s pixels
    /// against member `b`. Diagonal is 1.
    pub raw: Vec<Vec<f64>>,
    /// Max-product transitive closure of the min-symmetrized raw ratios.
    pub transitive: Vec<Vec<f64>>,
}

impl OverlapResult {
    pub fn member_index(&self, id: ImageId) -> Option<usize> {
        self.members.binary_search(&id).ok()
    }

    pub fn raw_between(&self, i: ImageId, j: ImageId) -> Option<f64> {
        Some(self.raw[self.member_index(i)?][self.member_index(j)?])
    }

    pub fn transitive_between(&self, i: ImageId, j: ImageId) -> Option<f64> {
        Some(self.transitive[self.member_index(i)?][self.member_index(j)?])
    }
}

/// One forward-backward reprojection check from a pixel of member `i`
/// against member `j`.
///
/// The chain lifts the pixel with `i`'s depth, projects the point into `j`,
/// lifts again with `j`'s depth sampled bilinearly there, maps the result
/// back and reprojects into `i`; the error is the distance to the starting
/// pixel. `None` marks an invalid sample: missing source depth, a forward
/// projection behind `j` or outside `j`'s raster, or missing target depth.
///
/// Panics if `i` or `j` is not a member of the star.
pub fn forward_backward_error(
    star: &LocalStarReconstruction,
    i: ImageId,
    j: ImageId,
    pixel: &Vector2<f64>,
) -> Option<f64> {
    let cam_i = star.camera(i).expect("i must be a star member");
    let cam_j = star.camera(j).expect("j must be a star member");
    let depth_i = star.depth(i).expect("i must be a star member");
    let depth_j = star.depth(j).expect("j must be a star member");
    let rel = star.relative(i, j).expect("members have poses");

    let d_i = depth_i.sample_bilinear(pixel.x, pixel.y)?;
    let x_i = cam_i.unproject(pixel, d_i);

    let in_j = rel.transform(&x_i);
    let forward = cam_j.project(&in_j).valid_pixel()?;
    if !cam_j.in_bounds(&forward) {
        return None;
    }

    let d_j = depth_j.sample_bilinear(forward.x, forward.y)?;
    let x_j = cam_j.unproject(&forward, d_j);

    let back_in_i = rel.inverse_transform(&x_j);
    // Perspective division is defined on either side of the camera; only a
    // point in the principal plane has no pixel. A point behind yields a
    // wild pixel and fails the threshold naturally.
    let backward = cam_i.project(&back_in_i).pixel()?;
    Some((pixel - backward).norm())
}

/// Fraction of member `i`'s sampled pixel grid that passes the
/// forward-backward check against member `j` at threshold `tau`. Invalid
/// samples count as failures; the denominator is the full grid.
pub fn raw_overlap(
    star: &LocalStarReconstruction,
    i: ImageId,
    j: ImageId,
    tau: f64,
    stride: u32,
) -> f64 {
    assert!(tau > 0.0, "tau must be positive");
    assert!(stride >= 1, "stride must be at least 1");
    if i == j {
        return 1.0;
    }
    let mut passed = 0usize;
    let mut total = 0usize;
    for y in (0..star.height).step_by(stride as usize) {
        for x in (0..star.width).step_by(stride as usize) {
            total += 1;
            let pixel = Vector2::new(x as f64, y as f64);
            if let Some(e) = forward_backward_error(star, i, j, &pixel) {
                if e < tau {
                    passed += 1;
                }
            }
        }
    }
    passed as f64 / total.max(1) as f64
}

/// Max-product closure of a symmetric ratio matrix with unit diagonal:
/// entry `(i, j)` becomes the maximum over all paths from `i` to `j` of the
/// product of ratios along the path. With all ratios in `[0, 1]` revisiting
/// a vertex never helps, so the all-pairs relaxation below converges to the
/// simple-path maximum.
pub fn transitive_overlap(sym: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = sym.len();
    for (a, row) in sym.iter().enumerate() {
        assert_eq!(row.len(), n, "ratio matrix must be square");
        for (b, &v) in row.iter().enumerate() {
            assert!(
                (-1e-12..=1.0 + 1e-12).contains(&v),
                "ratio ({a}, {b}) = {v} outside [0, 1]"
            );
        }
        assert!((row[a] - 1.0).abs() <= 1e-12, "diagonal must be 1");
    }
    let mut o = sym.to_vec();
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                let via = o[a][k] * o[k][b];
                if via > o[a][b] {
                    o[a][b] = via;
                }
            }
        }
    }
    o
}

/// Computes raw and transitive overlap ratios for one star.
pub fn star_overlap(star: &LocalStarReconstruction, tau: f64, stride: u32) -> OverlapResult {
    let members = star.members().to_vec();
    let n = members.len();
    let mut raw = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                raw[a][b] = raw_overlap(star, members[a], members[b], tau, stride);
            }
        }
    }
    // The chain is directional; downstream weights need one number per
    // pair, and the cautious reduction is the worse direction.
    let mut sym = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            sym[a][b] = raw[a][b].min(raw[b][a]);
        }
    }
    let transitive = transitive_overlap(&sym);
    OverlapResult { star: star.center(), members, tau, raw, transitive }
}

/// [`star_overlap`] over many stars, fanned out across worker threads.
/// Output order matches input order for any thread count.
pub fn star_overlaps(
    stars: &[LocalStarReconstruction],
    tau: f64,
    stride: u32,
    threads: usize,
) -> Vec<OverlapResult> {
    parallel_map(stars, threads, |star| star_overlap(star, tau, stride))
}

/// Reduces per-star transitive ratios to one weight per image pair: the
/// maximum over all stars containing the pair.
pub fn max_pair_overlaps(results: &[OverlapResult]) -> BTreeMap<(ImageId, ImageId), f64> {
    let mut map = BTreeMap::new();
    for result in results {
        for (a, &i) in result.members.iter().enumerate() {
            for (b, &j) in result.members.iter().enumerate().skip(a + 1) {
                let o = result.transitive[a][b];
                let entry = map.entry((i, j)).or_insert(o);
                if o > *entry {
                    *entry = o;
                }
            }
        }
    }
    map
}

/// Removes low-overlap edges from a connected view graph, weakest first,
/// skipping any removal that would disconnect it. Surviving edges carry
/// their pair overlap as weight; pairs no star covered count as zero.
pub fn filter_edges(
    graph: &ViewGraph,
    results: &[OverlapResult],
    min_overlap: f64,
) -> Result<ViewGraph, OverlapError> {
    filter_edges_by(graph, &max_pair_overlaps(results), min_overlap)
}

/// [`filter_edges`] with the per-pair reduction already done.
pub fn filter_edges_by(
    graph: &ViewGraph,
    pair_overlap: &BTreeMap<(ImageId, ImageId), f64>,
    min_overlap: f64,
) -> Result<ViewGraph, OverlapError> {
    if !(min_overlap.is_finite() && (0.0..=1.0).contains(&min_overlap)) {
        return Err(OverlapError::BadParams(format!("min_overlap {min_overlap}")));
    }
    if !graph.is_connected() {
        return Err(OverlapError::Disconnected);
    }
    let mut out = graph.clone();
    for (i, j, _) in graph.edges() {
        out.set_overlap(i, j, pair_overlap.get(&(i, j)).copied().unwrap_or(0.0));
    }
    let mut candidates: Vec<(f64, ImageId, ImageId)> = out
        .edges()
        .filter(|&(_, _, d)| d.overlap < min_overlap)
        .map(|(i, j, d)| (d.overlap, i, j))
        .collect();
    // Weakest first; ties broken by id so the scan order is reproducible.
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));
    for (_, i, j) in candidates {
        let data = out.remove_edge(i, j).expect("candidate edge exists");
        if !out.is_connected() {
            out.insert_edge(i, j, data);
        }
    }
    assert!(out.is_connected(), "edge filtering must preserve connectivity");
    Ok(out)
}
