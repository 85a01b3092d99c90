//! Structural summaries of the view graph: radius and algebraic
//! connectivity.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;

use crate::ids::ImageId;

use super::{ViewGraph, ViewGraphError};

/// Eccentricity of `start`: the greatest BFS distance to any reachable
/// vertex, plus how many vertices were reached.
fn bfs_eccentricity(
    graph: &ViewGraph,
    start: ImageId,
) -> (usize, usize) {
    let mut dist: BTreeMap<ImageId, usize> = BTreeMap::new();
    dist.insert(start, 0);
    let mut queue = VecDeque::from([start]);
    let mut ecc = 0;
    while let Some(v) = queue.pop_front() {
        let dv = dist[&v];
        for w in graph.neighbors(v) {
            if !dist.contains_key(&w) {
                dist.insert(w, dv + 1);
                ecc = ecc.max(dv + 1);
                queue.push_back(w);
            }
        }
    }
    (ecc, dist.len())
}

/// Radius of a connected graph: the smallest eccentricity over all vertices.
///
/// A single vertex has radius zero. Disconnected graphs have no finite
/// radius and are rejected.
pub fn graph_radius(graph: &ViewGraph) -> Result<usize, ViewGraphError> {
    let n = graph.vertex_count();
    if n == 0 {
        return Err(ViewGraphError::EmptyInput);
    }
    let mut radius = usize::MAX;
    for v in graph.vertices() {
        let (ecc, reached) = bfs_eccentricity(graph, v);
        if reached != n {
            return Err(ViewGraphError::Disconnected {
                components: graph.connected_components().len(),
            });
        }
        radius = radius.min(ecc);
    }
    Ok(radius)
}

/// Second-smallest eigenvalue of the unweighted graph Laplacian.
///
/// Positive exactly when the graph is connected; the magnitude grows with
/// how well-linked the graph is. Values that come out of the eigensolver as
/// tiny negatives are clamped to zero. Needs at least two vertices.
pub fn fiedler_value(graph: &ViewGraph) -> Result<f64, ViewGraphError> {
    let n = graph.vertex_count();
    if n < 2 {
        return Err(ViewGraphError::TooFewVertices { needed: 2, got: n });
    }
    let index: BTreeMap<ImageId, usize> = graph
        .vertices()
        .enumerate()
        .map(|(k, v)| (v, k))
        .collect();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for (i, j, _) in graph.edges() {
        let (a, b) = (index[&i], index[&j]);
        lap[(a, b)] = -1.0;
        lap[(b, a)] = -1.0;
        lap[(a, a)] += 1.0;
        lap[(b, b)] += 1.0;
    }
    let mut eigen: Vec<f64> = lap.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigen.sort_by(f64::total_cmp);
    Ok(eigen[1].max(0.0))
}

/// Radius and algebraic connectivity in one bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphStats {
    pub radius: usize,
    pub fiedler: f64,
}

impl GraphStats {
    pub fn compute(graph: &ViewGraph) -> Result<Self, ViewGraphError> {
        Ok(GraphStats {
            radius: graph_radius(graph)?,
            fiedler: fiedler_value(graph)?,
        })
    }
}
