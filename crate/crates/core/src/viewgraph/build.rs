//! Threshold sweep that grows the view graph and the star decomposition of
//! the result.

use std::collections::BTreeMap;

use crate::ids::ImageId;

use super::{
    CandidateScores, EdgeData, UnionFind, ViewGraph, ViewGraphError, DEFAULT_DELTA0,
    DEFAULT_DELTA_FLOOR, DEFAULT_DELTA_STEP,
};

/// Parameters of the connectivity sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParams {
    /// Starting threshold.
    pub delta0: f64,
    /// How much the threshold drops between rounds.
    pub step: f64,
    /// Lowest threshold attempted; the sweep gives up below it.
    pub floor: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            delta0: DEFAULT_DELTA0,
            step: DEFAULT_DELTA_STEP,
            floor: DEFAULT_DELTA_FLOOR,
        }
    }
}

impl ThresholdParams {
    fn validate(&self) -> Result<(), ViewGraphError> {
        let ok = self.delta0.is_finite()
            && self.step.is_finite()
            && self.floor.is_finite()
            && self.step > 0.0
            && self.floor > 0.0
            && self.floor <= self.delta0
            && self.delta0 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(ViewGraphError::BadThresholds(format!(
                "delta0 {}, step {}, floor {}",
                self.delta0, self.step, self.floor
            )))
        }
    }
}

/// One round of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTrace {
    pub delta: f64,
    pub edges_added: usize,
}

/// What the sweep did, round by round.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTrace {
    pub rounds: Vec<RoundTrace>,
    /// Whether the sweep ended with a connected graph. When false, the
    /// returned graph is the largest connected component.
    pub connected: bool,
}

impl ThresholdTrace {
    /// Thresholds visited, strongest first.
    pub fn deltas(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.delta).collect()
    }
}

/// Grows a view graph by sweeping a similarity threshold from strong to weak.
///
/// Each round adds, all at once, every candidate edge whose score exceeds the
/// current threshold *and* whose endpoints lie in different connected
/// components at the start of the round. Strong edges therefore enter densely
/// in the first round they qualify, while weaker edges are only admitted
/// where they bridge separate components. The sweep stops as soon as the
/// graph is connected; otherwise it lowers the threshold by `step` and tries
/// again, down to `floor` inclusive. If the graph never connects, the largest
/// connected component (ties broken toward the component holding the smallest
/// image id) is returned and the trace says so.
///
/// Within a round, edges are scanned in descending score, ties broken by
/// lexicographic `(i, j)`, which fixes the edge insertion order.
pub fn dynamic_threshold_connect(
    scores: &CandidateScores,
    params: ThresholdParams,
) -> Result<(ViewGraph, ThresholdTrace), ViewGraphError> {
    params.validate()?;
    if scores.is_empty() {
        return Err(ViewGraphError::EmptyInput);
    }

    let images: Vec<ImageId> = scores.images().collect();
    let index: BTreeMap<ImageId, usize> = images
        .iter()
        .enumerate()
        .map(|(idx, &id)| (id, idx))
        .collect();

    // Candidate edges sorted once: descending score, then (i, j).
    let mut candidates: Vec<(ImageId, ImageId, f64)> = scores.pairs().collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1))));

    let mut graph = ViewGraph::new();
    for &id in &images {
        graph.insert_vertex(id);
    }

    let mut uf = UnionFind::new(images.len());
    let mut rounds = Vec::new();
    let mut delta = params.delta0;
    let connected = loop {
        // Components at the start of the round; edges are admitted against
        // this snapshot, so parallel bridges between two components all enter
        // in the same round.
        let snapshot: Vec<usize> = (0..images.len()).map(|k| uf.find(k)).collect();
        let mut edges_added = 0;
        for &(i, j, alpha) in &candidates {
            if alpha <= delta {
                continue;
            }
            let (a, b) = (index[&i], index[&j]);
            if snapshot[a] != snapshot[b] && !graph.contains_edge(i, j) {
                graph.insert_edge(i, j, EdgeData { alpha, overlap: 0.0 });
                uf.union(a, b);
                edges_added += 1;
            }
        }
        rounds.push(RoundTrace { delta, edges_added });
        if uf.component_count() == 1 {
            break true;
        }
        let next = delta - params.step;
        // The floor itself is attempted; only dropping below it stops the
        // sweep. The small fuzz keeps accumulated rounding in `delta` from
        // skipping the floor round.
        if next < params.floor - 1e-9 {
            break false;
        }
        delta = next;
    };

    let trace = ThresholdTrace { rounds, connected };
    if connected {
        return Ok((graph, trace));
    }

    // Keep the largest component; ties go to the one with the smallest id.
    let components = graph.connected_components();
    let largest = components
        .iter()
        .max_by(|a, b| {
            a.len()
                .cmp(&b.len())
                .then_with(|| b.iter().next().cmp(&a.iter().next()))
        })
        .expect("non-empty input has at least one component");
    Ok((graph.induced_subgraph(largest), trace))
}

/// A star: one center image plus its retained graph neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct Star {
    pub center: ImageId,
    /// Sorted member ids, always including the center.
    pub members: Vec<ImageId>,
}

impl Star {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: ImageId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    /// Members other than the center.
    pub fn neighbors(&self) -> impl Iterator<Item = ImageId> + '_ {
        let center = self.center;
        self.members.iter().copied().filter(move |&m| m != center)
    }
}

/// Splits the graph into one star per image: the image plus at most `cap` of
/// its strongest neighbors (ties toward smaller ids). Images with no
/// neighbors produce no star. Stars are returned in center-id order.
pub fn decompose_stars(graph: &ViewGraph, cap: usize) -> Vec<Star> {
    let mut stars = Vec::new();
    for center in graph.vertices() {
        let mut neighbors: Vec<(ImageId, f64)> = graph
            .neighbors(center)
            .map(|n| {
                let alpha = graph
                    .edge(center, n)
                    .map(|e| e.alpha)
                    .expect("adjacency implies edge");
                (n, alpha)
            })
            .collect();
        if neighbors.is_empty() {
            continue;
        }
        neighbors.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        neighbors.truncate(cap);
        let mut members: Vec<ImageId> = neighbors.into_iter().map(|(n, _)| n).collect();
        members.push(center);
        members.sort_unstable();
        stars.push(Star { center, members });
    }
    stars
}
