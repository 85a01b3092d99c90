//! Robust rotation averaging on the measurement graph.
//!
//! Finds one rotation per image minimizing the weighted robust geodesic
//! objective `sum ρ((o·‖Log(R_ij⁻¹ R_j R_i⁻¹)‖)²)`. Initialization chains
//! relative rotations along the maximum-weight spanning tree; refinement is
//! iteratively reweighted Gauss–Newton in the tangent space with the
//! lowest-id image frozen at the identity.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::geom::so3::left_jacobian_inv;
use crate::geom::{RobustLoss, Rotation};
use crate::ids::ImageId;

use super::{
    maximum_spanning_tree, measurement_components, measurement_images, positive_weight,
    validate_measurements, AveragingError, RelativeMeasurement,
};

#[derive(Debug, Clone)]
pub struct RotationConfig {
    /// Robust loss on the squared weighted residual norm.
    pub loss: RobustLoss,
    /// Converged once the largest per-image tangent update drops below this
    /// many radians.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            loss: RobustLoss::huber(0.1),
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RotationSolution {
    /// World-to-camera rotation per image; the lowest id is the identity.
    pub rotations: BTreeMap<ImageId, Rotation>,
    /// Final robust cost.
    pub cost: f64,
    pub iterations: usize,
    /// Accepted cost after each iteration, starting with the initial cost.
    pub cost_trace: Vec<f64>,
}

/// Per-measurement linearization at the current rotations: IRLS weight,
/// weighted residual and its two Jacobian blocks.
struct Linearized {
    w: f64,
    r: Vector3<f64>,
    a_i: Matrix3<f64>,
    a_j: Matrix3<f64>,
}

fn linearize(
    m: &RelativeMeasurement,
    rotations: &BTreeMap<ImageId, Rotation>,
    loss: &RobustLoss,
) -> Linearized {
    let r_i = &rotations[&m.i];
    let r_j = &rotations[&m.j];
    // Error rotation E = R_ij⁻¹ · R_j · R_i⁻¹, identity when consistent.
    let err = m.rotation.inverse().compose(&r_j.compose(&r_i.inverse()));
    let e = err.scaled_axis();
    let o = m.weight;
    let (_, w) = loss.evaluate(o * o * e.norm_squared());
    // Left-multiplicative updates R ← Exp(δ)·R give
    //   e(δ) ≈ e + J_l⁻¹(e)·R_ijᵀ·δ_j − J_l⁻¹(−e)·δ_i.
    let a_j = left_jacobian_inv(&e) * m.rotation.inverse().matrix() * o;
    let a_i = left_jacobian_inv(&-e) * (-o);
    Linearized { w, r: e * o, a_i, a_j }
}

fn total_cost(
    measurements: &[&RelativeMeasurement],
    rotations: &BTreeMap<ImageId, Rotation>,
    loss: &RobustLoss,
) -> f64 {
    measurements
        .iter()
        .map(|m| {
            let err = m
                .rotation
                .inverse()
                .compose(&rotations[&m.j].compose(&rotations[&m.i].inverse()));
            let e = err.scaled_axis();
            loss.evaluate(m.weight * m.weight * e.norm_squared()).0
        })
        .sum()
}

/// Cost and its exact gradient with respect to left-multiplicative tangent
/// perturbations of every image (no gauge freezing). Used to validate the
/// solver's Jacobians against finite differences.
#[cfg(test)]
pub(crate) fn cost_and_gradient(
    measurements: &[RelativeMeasurement],
    rotations: &BTreeMap<ImageId, Rotation>,
    loss: &RobustLoss,
) -> (f64, BTreeMap<ImageId, Vector3<f64>>) {
    let mut cost = 0.0;
    let mut gradient: BTreeMap<ImageId, Vector3<f64>> =
        rotations.keys().map(|&id| (id, Vector3::zeros())).collect();
    for m in measurements {
        let lin = linearize(m, rotations, loss);
        cost += loss.evaluate(lin.r.norm_squared()).0;
        // d/dδ ρ((o‖e‖)²) = ρ′ · 2 · (∂(oe)/∂δ)ᵀ (oe).
        *gradient.get_mut(&m.i).unwrap() += 2.0 * lin.w * lin.a_i.transpose() * lin.r;
        *gradient.get_mut(&m.j).unwrap() += 2.0 * lin.w * lin.a_j.transpose() * lin.r;
    }
    (cost, gradient)
}

/// Chains relative rotations outward from `root` along the spanning tree.
fn chain_initialization(
    images: &[ImageId],
    measurements: &[&RelativeMeasurement],
    tree: &[usize],
) -> BTreeMap<ImageId, Rotation> {
    let mut adjacency: BTreeMap<ImageId, Vec<(usize, ImageId)>> = BTreeMap::new();
    for &t in tree {
        let m = measurements[t];
        adjacency.entry(m.i).or_default().push((t, m.j));
        adjacency.entry(m.j).or_default().push((t, m.i));
    }
    for list in adjacency.values_mut() {
        list.sort_by_key(|&(_, other)| other);
    }

    let root = images[0];
    let mut rotations = BTreeMap::new();
    rotations.insert(root, Rotation::identity());
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let Some(neighbors) = adjacency.get(&u) else { continue };
        for &(t, v) in neighbors {
            if rotations.contains_key(&v) {
                continue;
            }
            let m = measurements[t];
            let r_v = if m.i == u {
                // R_j = R_ij · R_i.
                m.rotation.compose(&rotations[&u])
            } else {
                // R_i = R_ij⁻¹ · R_j.
                m.rotation.inverse().compose(&rotations[&u])
            };
            rotations.insert(v, r_v);
            queue.push_back(v);
        }
    }
    rotations
}

pub fn rotation_averaging(
    measurements: &[RelativeMeasurement],
    config: &RotationConfig,
) -> Result<RotationSolution, AveragingError> {
    validate_measurements(measurements)?;
    let active: Vec<&RelativeMeasurement> =
        measurements.iter().filter(|m| positive_weight(m)).collect();
    if active.is_empty() {
        return Err(AveragingError::NoMeasurements);
    }
    let owned: Vec<RelativeMeasurement> = active.iter().map(|&m| m.clone()).collect();
    let images = measurement_images(&owned);
    let components = measurement_components(&images, &owned);
    if components > 1 {
        return Err(AveragingError::Disconnected { components });
    }

    let tree = maximum_spanning_tree(&images, &owned);
    let mut rotations = chain_initialization(&images, &active, &tree);

    // Tangent slots: 3 unknowns per image except the frozen root.
    let slot: BTreeMap<ImageId, Option<usize>> = images
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k.checked_sub(1)))
        .collect();
    let dim = 3 * (images.len() - 1);

    let mut cost = total_cost(&active, &rotations, &config.loss);
    let mut cost_trace = vec![cost];
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        if dim == 0 {
            break;
        }
        iterations += 1;

        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for m in &active {
            let lin = linearize(m, &rotations, &config.loss);
            let blocks = [(slot[&m.i], lin.a_i), (slot[&m.j], lin.a_j)];
            for &(row, a_row) in &blocks {
                let Some(row) = row else { continue };
                g.fixed_rows_mut::<3>(3 * row).add_assign(lin.w * a_row.transpose() * lin.r);
                for &(col, a_col) in &blocks {
                    let Some(col) = col else { continue };
                    h.fixed_view_mut::<3, 3>(3 * row, 3 * col)
                        .add_assign(lin.w * a_row.transpose() * a_col);
                }
            }
        }

        let delta = solve_normal_equations(&h, &g)?;
        let step_norm = (0..dim / 3)
            .map(|b| delta.fixed_rows::<3>(3 * b).norm())
            .fold(0.0, f64::max);
        if step_norm < config.tolerance {
            break;
        }

        // Backtracking line search keeps accepted costs monotone.
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..30 {
            let candidate = apply_step(&rotations, &slot, &delta, t);
            let c = total_cost(&active, &candidate, &config.loss);
            if c < cost {
                accepted = Some((candidate, c));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, c)) => {
                rotations = candidate;
                cost = c;
                cost_trace.push(cost);
            }
            // No step length improves the cost: numerical floor reached.
            None => break,
        }
    }

    Ok(RotationSolution { rotations, cost, iterations, cost_trace })
}

fn apply_step(
    rotations: &BTreeMap<ImageId, Rotation>,
    slot: &BTreeMap<ImageId, Option<usize>>,
    delta: &DVector<f64>,
    t: f64,
) -> BTreeMap<ImageId, Rotation> {
    rotations
        .iter()
        .map(|(&id, r)| {
            let updated = match slot[&id] {
                Some(b) => {
                    let d: Vector3<f64> = delta.fixed_rows::<3>(3 * b).into();
                    Rotation::from_scaled_axis(d * t).compose(r)
                }
                None => *r,
            };
            (id, updated)
        })
        .collect()
}

/// Solves `H δ = −g`, falling back to a diagonally regularized LU solve
/// when the Cholesky factorization fails.
pub(crate) fn solve_normal_equations(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
) -> Result<DVector<f64>, AveragingError> {
    let rhs = -g;
    if let Some(chol) = h.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    let mut damped = h.clone();
    for d in 0..h.nrows() {
        damped[(d, d)] += 1e-9 * (1.0 + h[(d, d)].abs());
    }
    damped
        .lu()
        .solve(&rhs)
        .ok_or_else(|| AveragingError::SolverFailure("normal equations are singular".into()))
}
