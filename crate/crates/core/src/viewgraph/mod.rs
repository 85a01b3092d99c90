//! View-graph construction and analysis.
//!
//! Images enter as per-pair candidate similarity scores. A dynamic
//! thresholding sweep admits edges from strong to weak until the graph is
//! connected (or gives up and keeps the largest component), the result is
//! decomposed into one star per image, and simple spectral/metric statistics
//! describe how well-connected the final graph is.

mod build;
mod stats;

pub use build::{decompose_stars, dynamic_threshold_connect, Star, ThresholdParams, ThresholdTrace};
pub use stats::{fiedler_value, graph_radius, GraphStats};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ids::ImageId;

/// Default starting threshold for the connectivity sweep.
pub const DEFAULT_DELTA0: f64 = 0.8;
/// Default amount the threshold drops per round.
pub const DEFAULT_DELTA_STEP: f64 = 0.1;
/// Default lowest threshold attempted before giving up.
pub const DEFAULT_DELTA_FLOOR: f64 = 0.2;
/// Default cap on neighbors kept per star.
pub const DEFAULT_NEIGHBOR_CAP: usize = 25;

#[derive(Debug, Error)]
pub enum ViewGraphError {
    #[error("candidate score set is empty")]
    EmptyInput,
    #[error("score {score} for pair ({i}, {j}) is outside [0, 1]")]
    ScoreOutOfRange { i: ImageId, j: ImageId, score: f64 },
    #[error("self-pair ({0}, {0}) is not a candidate edge")]
    SelfPair(ImageId),
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("operation needs at least {needed} vertices, got {got}")]
    TooFewVertices { needed: usize, got: usize },
    #[error("invalid threshold parameters: {0}")]
    BadThresholds(String),
}

/// Symmetric pairwise similarity scores over a set of images.
///
/// Directed scores may be inserted from both sides; a pair keeps the maximum
/// of the two directions. `budget` records how many candidates were retrieved
/// per image (metadata; it does not constrain insertion).
#[derive(Debug, Clone, Default)]
pub struct CandidateScores {
    budget: u32,
    images: BTreeSet<ImageId>,
    scores: BTreeMap<(ImageId, ImageId), f64>,
}

impl CandidateScores {
    pub fn new(budget: u32) -> Self {
        CandidateScores {
            budget,
            images: BTreeSet::new(),
            scores: BTreeMap::new(),
        }
    }

    /// Registers an image even if no scored pair mentions it.
    pub fn add_image(&mut self, id: ImageId) {
        self.images.insert(id);
    }

    /// Inserts a (possibly directed) score; the symmetric score of the pair
    /// becomes the maximum over inserted directions.
    pub fn insert(&mut self, i: ImageId, j: ImageId, score: f64) -> Result<(), ViewGraphError> {
        if i == j {
            return Err(ViewGraphError::SelfPair(i));
        }
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(ViewGraphError::ScoreOutOfRange { i, j, score });
        }
        self.images.insert(i);
        self.images.insert(j);
        let key = if i < j { (i, j) } else { (j, i) };
        let entry = self.scores.entry(key).or_insert(score);
        if score > *entry {
            *entry = score;
        }
        Ok(())
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn images(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.images.iter().copied()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn score(&self, i: ImageId, j: ImageId) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.scores.get(&key).copied()
    }

    /// All scored pairs as `(i, j, score)` with `i < j`, in id order.
    pub fn pairs(&self) -> impl Iterator<Item = (ImageId, ImageId, f64)> + '_ {
        self.scores.iter().map(|(&(i, j), &s)| (i, j, s))
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Attributes stored on a view-graph edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeData {
    /// Candidate similarity score that admitted the edge.
    pub alpha: f64,
    /// Transitive overlap weight; `0.0` until the overlap stage fills it.
    pub overlap: f64,
}

/// Undirected graph over images with scored edges.
#[derive(Debug, Clone, Default)]
pub struct ViewGraph {
    vertices: BTreeSet<ImageId>,
    edges: BTreeMap<(ImageId, ImageId), EdgeData>,
    adjacency: BTreeMap<ImageId, BTreeSet<ImageId>>,
}

impl ViewGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_vertex(&mut self, v: ImageId) {
        self.vertices.insert(v);
        self.adjacency.entry(v).or_default();
    }

    pub fn insert_edge(&mut self, i: ImageId, j: ImageId, data: EdgeData) {
        assert!(i != j, "self-edges are not representable");
        self.insert_vertex(i);
        self.insert_vertex(j);
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.insert(key, data);
        self.adjacency.get_mut(&i).unwrap().insert(j);
        self.adjacency.get_mut(&j).unwrap().insert(i);
    }

    pub fn remove_edge(&mut self, i: ImageId, j: ImageId) -> Option<EdgeData> {
        let key = if i < j { (i, j) } else { (j, i) };
        let removed = self.edges.remove(&key);
        if removed.is_some() {
            self.adjacency.get_mut(&i).unwrap().remove(&j);
            self.adjacency.get_mut(&j).unwrap().remove(&i);
        }
        removed
    }

    pub fn contains_edge(&self, i: ImageId, j: ImageId) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.contains_key(&key)
    }

    pub fn edge(&self, i: ImageId, j: ImageId) -> Option<&EdgeData> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.get(&key)
    }

    pub fn set_overlap(&mut self, i: ImageId, j: ImageId, overlap: f64) {
        let key = if i < j { (i, j) } else { (j, i) };
        if let Some(e) = self.edges.get_mut(&key) {
            e.overlap = overlap;
        }
    }

    pub fn vertices(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.vertices.iter().copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j, data)` with `i < j`, in id order.
    pub fn edges(&self) -> impl Iterator<Item = (ImageId, ImageId, EdgeData)> + '_ {
        self.edges.iter().map(|(&(i, j), &d)| (i, j, d))
    }

    pub fn neighbors(&self, v: ImageId) -> impl Iterator<Item = ImageId> + '_ {
        self.adjacency.get(&v).into_iter().flatten().copied()
    }

    pub fn degree(&self, v: ImageId) -> usize {
        self.adjacency.get(&v).map_or(0, |n| n.len())
    }

    pub fn contains_vertex(&self, v: ImageId) -> bool {
        self.vertices.contains(&v)
    }

    /// Connected components as sorted vertex sets, ordered by their smallest
    /// member.
    pub fn connected_components(&self) -> Vec<BTreeSet<ImageId>> {
        let mut seen = BTreeSet::new();
        let mut components = Vec::new();
        for &start in &self.vertices {
            if seen.contains(&start) {
                continue;
            }
            let mut component = BTreeSet::new();
            let mut queue = vec![start];
            seen.insert(start);
            while let Some(v) = queue.pop() {
                component.insert(v);
                for n in self.neighbors(v) {
                    if seen.insert(n) {
                        queue.push(n);
                    }
                }
            }
            components.push(component);
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() <= 1
    }

    /// Subgraph induced by a vertex set: kept vertices plus every edge with
    /// both endpoints inside.
    pub fn induced_subgraph(&self, keep: &BTreeSet<ImageId>) -> ViewGraph {
        let mut sub = ViewGraph::new();
        for &v in keep {
            if self.vertices.contains(&v) {
                sub.insert_vertex(v);
            }
        }
        for (&(i, j), &data) in &self.edges {
            if keep.contains(&i) && keep.contains(&j) {
                sub.insert_edge(i, j, data);
            }
        }
        sub
    }
}

/// Plain union-find over dense indices, used by the threshold sweep and the
/// spanning-tree builders.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u32>,
    components: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
            components: n,
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Merges the sets containing `a` and `b`; returns false if they were
    /// already together.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (hi, lo) = if self.rank[ra] >= self.rank[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo] = hi;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        self.components -= 1;
        true
    }

    pub fn component_count(&self) -> usize {
        self.components
    }
}
