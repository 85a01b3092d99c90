//! Similarity averaging: one camera center per image plus one scale per
//! star, fitted to the star-gauge relative translations.
//!
//! Each measurement is first mapped into the world frame through the
//! already-averaged rotations, `b = R̂_i⁻¹·R_ij⁻¹·t_ij`, which for a
//! consistent star equals `s_l·(c_i − c_j)`. The primal backend fits
//! `b − s_l·(c_i − c_j)` with the scale on the center difference; the
//! variant backend fits `s̃_l·b − (c_i − c_j)` and is linear in all
//! unknowns, so with a trivial loss it solves in one step. The two scale
//! conventions are reciprocal: `s_l = 1/s̃_l`.
//!
//! Gauge: the lowest image id sits at the origin and the lowest star id
//! has unit scale.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, Vector3};

use crate::geom::{RobustLoss, Rotation};
use crate::ids::ImageId;

use super::rotation::solve_normal_equations;
use super::{
    maximum_spanning_tree, measurement_components, measurement_images, positive_weight,
    validate_measurements, AveragingError, RelativeMeasurement,
};

#[derive(Debug, Clone)]
pub struct SimilarityConfig {
    /// Robust loss on the squared weighted residual norm. `None` picks a
    /// Huber loss with scale 0.01 × the median initialized baseline.
    pub loss: Option<RobustLoss>,
    /// Converged once an accepted step improves the cost by less than this
    /// relative amount.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { loss: None, tolerance: 1e-12, max_iterations: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct SimilaritySolution {
    /// Camera center per image; the lowest id sits at the origin.
    pub centers: BTreeMap<ImageId, Vector3<f64>>,
    /// Scale per star. For [`similarity_averaging`] this multiplies center
    /// differences to reach star units; for
    /// [`similarity_averaging_variant`] it multiplies the measurement
    /// instead, and the two are reciprocal. The lowest star id is pinned
    /// to 1 in both conventions.
    pub scales: BTreeMap<ImageId, f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Accepted cost after each iteration, starting with the initial cost.
    pub cost_trace: Vec<f64>,
}

/// Validated, filtered problem with world-frame baselines precomputed.
struct Problem {
    active: Vec<RelativeMeasurement>,
    /// `b_m = R̂_i⁻¹·R_ij⁻¹·t_ij`, parallel to `active`.
    baselines: Vec<Vector3<f64>>,
    images: Vec<ImageId>,
    stars: Vec<ImageId>,
}

impl Problem {
    fn root(&self) -> ImageId {
        self.images[0]
    }

    fn anchor(&self) -> ImageId {
        self.stars[0]
    }
}

fn setup(
    rotations: &BTreeMap<ImageId, Rotation>,
    measurements: &[RelativeMeasurement],
) -> Result<Problem, AveragingError> {
    validate_measurements(measurements)?;
    let active: Vec<RelativeMeasurement> =
        measurements.iter().filter(|m| positive_weight(m)).cloned().collect();
    if active.is_empty() {
        return Err(AveragingError::NoMeasurements);
    }
    let images = measurement_images(&active);
    let components = measurement_components(&images, &active);
    if components > 1 {
        return Err(AveragingError::Disconnected { components });
    }
    for &id in &images {
        if !rotations.contains_key(&id) {
            return Err(AveragingError::MissingRotation(id));
        }
    }
    let baselines = active
        .iter()
        .map(|m| {
            rotations[&m.i]
                .inverse()
                .apply(&m.rotation.inverse().apply(&m.translation))
        })
        .collect();
    let mut stars: Vec<ImageId> = active.iter().map(|m| m.star).collect();
    stars.sort();
    stars.dedup();
    Ok(Problem { active, baselines, images, stars })
}

/// Spanning-tree initialization: chains centers outward from the root,
/// estimating each star's scale from the first tree edge it contributes
/// (stars that never contribute a tree edge inherit the scale in effect
/// where the tree reaches them). A per-star least-squares refit against
/// the chained centers follows, and the whole state is renormalized so the
/// anchor star has unit scale.
fn initialize(
    problem: &Problem,
) -> (BTreeMap<ImageId, Vector3<f64>>, BTreeMap<ImageId, f64>) {
    let tree = maximum_spanning_tree(&problem.images, &problem.active);
    let mut adjacency: BTreeMap<ImageId, Vec<(usize, ImageId)>> = BTreeMap::new();
    for &t in &tree {
        let m = &problem.active[t];
        adjacency.entry(m.i).or_default().push((t, m.j));
        adjacency.entry(m.j).or_default().push((t, m.i));
    }
    for list in adjacency.values_mut() {
        list.sort_by_key(|&(_, other)| other);
    }

    let root = problem.root();
    let mut centers: BTreeMap<ImageId, Vector3<f64>> = BTreeMap::new();
    let mut scales: BTreeMap<ImageId, f64> = BTreeMap::new();
    let mut arrival: BTreeMap<ImageId, f64> = BTreeMap::new();
    centers.insert(root, Vector3::zeros());
    arrival.insert(root, 1.0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let Some(neighbors) = adjacency.get(&u) else { continue };
        for &(t, v) in neighbors {
            if centers.contains_key(&v) {
                continue;
            }
            let m = &problem.active[t];
            let s = *scales.entry(m.star).or_insert_with(|| arrival[&u]);
            let step = problem.baselines[t] / s;
            // b = s·(c_i − c_j): walking i→j subtracts the step.
            let c_v = if m.i == u { centers[&u] - step } else { centers[&u] + step };
            centers.insert(v, c_v);
            arrival.insert(v, s);
            queue.push_back(v);
        }
    }
    for &star in &problem.stars {
        scales.entry(star).or_insert(1.0);
    }

    // Least-squares refit of each scale against the chained centers:
    // s = Σ o²·bᵀΔc / Σ o²·‖Δc‖².
    let mut numerator: BTreeMap<ImageId, f64> = BTreeMap::new();
    let mut denominator: BTreeMap<ImageId, f64> = BTreeMap::new();
    for (m, b) in problem.active.iter().zip(&problem.baselines) {
        let dc = centers[&m.i] - centers[&m.j];
        let o2 = m.weight * m.weight;
        *numerator.entry(m.star).or_insert(0.0) += o2 * b.dot(&dc);
        *denominator.entry(m.star).or_insert(0.0) += o2 * dc.norm_squared();
    }
    for (star, s) in scales.iter_mut() {
        let den = denominator.get(star).copied().unwrap_or(0.0);
        if den > 1e-18 {
            let fitted = numerator[star] / den;
            if fitted > 1e-9 * *s {
                *s = fitted;
            }
        }
    }

    // Renormalize the free (center-metric, scale) gauge so the anchor star
    // has exactly unit scale.
    let gauge = scales[&problem.anchor()];
    for c in centers.values_mut() {
        *c *= gauge;
    }
    for s in scales.values_mut() {
        *s /= gauge;
    }
    *scales.get_mut(&problem.anchor()).unwrap() = 1.0;
    (centers, scales)
}

fn resolve_loss(
    config: &SimilarityConfig,
    problem: &Problem,
    init_scales: &BTreeMap<ImageId, f64>,
) -> RobustLoss {
    if let Some(loss) = &config.loss {
        return loss.clone();
    }
    let mut baselines: Vec<f64> = problem
        .active
        .iter()
        .zip(&problem.baselines)
        .map(|(m, b)| b.norm() / init_scales[&m.star])
        .collect();
    baselines.sort_by(f64::total_cmp);
    let median = baselines[baselines.len() / 2];
    RobustLoss::huber((0.01 * median).max(1e-12))
}

/// Scalar-column Jacobian of one measurement's weighted residual: pairs of
/// (unknown index, `∂(o·r)/∂x` as a 3-vector).
type Columns = Vec<(usize, Vector3<f64>)>;

/// Residual and Jacobian columns for the primal parameterization
/// `r = b − s_l·(c_i − c_j)` with `s_l = exp(λ_l)`.
#[allow(clippy::too_many_arguments)]
fn primal_residual(
    m: &RelativeMeasurement,
    b: &Vector3<f64>,
    centers: &BTreeMap<ImageId, Vector3<f64>>,
    lambdas: &BTreeMap<ImageId, f64>,
    center_slot: &BTreeMap<ImageId, Option<usize>>,
    scale_slot: &BTreeMap<ImageId, Option<usize>>,
    scale_base: usize,
    columns: Option<&mut Columns>,
) -> Vector3<f64> {
    let s = lambdas[&m.star].exp();
    let dc = centers[&m.i] - centers[&m.j];
    let r = (b - s * dc) * m.weight;
    if let Some(columns) = columns {
        let os = m.weight * s;
        if let Some(k) = center_slot[&m.i] {
            for a in 0..3 {
                let mut u = Vector3::zeros();
                u[a] = -os;
                columns.push((3 * k + a, u));
            }
        }
        if let Some(k) = center_slot[&m.j] {
            for a in 0..3 {
                let mut u = Vector3::zeros();
                u[a] = os;
                columns.push((3 * k + a, u));
            }
        }
        if let Some(k) = scale_slot[&m.star] {
            columns.push((scale_base + k, -os * dc));
        }
    }
    r
}

/// Residual and Jacobian columns for the variant parameterization
/// `r̃ = s̃_l·b − (c_i − c_j)` with `s̃_l = exp(μ_l)`.
#[allow(clippy::too_many_arguments)]
fn variant_residual(
    m: &RelativeMeasurement,
    b: &Vector3<f64>,
    centers: &BTreeMap<ImageId, Vector3<f64>>,
    mus: &BTreeMap<ImageId, f64>,
    center_slot: &BTreeMap<ImageId, Option<usize>>,
    scale_slot: &BTreeMap<ImageId, Option<usize>>,
    scale_base: usize,
    columns: Option<&mut Columns>,
) -> Vector3<f64> {
    let s = mus[&m.star].exp();
    let dc = centers[&m.i] - centers[&m.j];
    let r = (s * b - dc) * m.weight;
    if let Some(columns) = columns {
        let o = m.weight;
        if let Some(k) = center_slot[&m.i] {
            for a in 0..3 {
                let mut u = Vector3::zeros();
                u[a] = -o;
                columns.push((3 * k + a, u));
            }
        }
        if let Some(k) = center_slot[&m.j] {
            for a in 0..3 {
                let mut u = Vector3::zeros();
                u[a] = o;
                columns.push((3 * k + a, u));
            }
        }
        if let Some(k) = scale_slot[&m.star] {
            columns.push((scale_base + k, (o * s) * b));
        }
    }
    r
}

/// Shared Gauss–Newton/IRLS driver over either residual parameterization.
fn refine(
    problem: &Problem,
    centers: &mut BTreeMap<ImageId, Vector3<f64>>,
    log_scales: &mut BTreeMap<ImageId, f64>,
    loss: &RobustLoss,
    tolerance: f64,
    max_iterations: usize,
    variant: bool,
) -> Result<(f64, usize, Vec<f64>), AveragingError> {
    let center_slot: BTreeMap<ImageId, Option<usize>> = problem
        .images
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k.checked_sub(1)))
        .collect();
    let scale_slot: BTreeMap<ImageId, Option<usize>> = problem
        .stars
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k.checked_sub(1)))
        .collect();
    let scale_base = 3 * (problem.images.len() - 1);
    let dim = scale_base + problem.stars.len() - 1;

    let residual = if variant { variant_residual } else { primal_residual };
    let evaluate = |centers: &BTreeMap<ImageId, Vector3<f64>>,
                    log_scales: &BTreeMap<ImageId, f64>| {
        problem
            .active
            .iter()
            .zip(&problem.baselines)
            .map(|(m, b)| {
                let r = residual(
                    m, b, centers, log_scales, &center_slot, &scale_slot, scale_base, None,
                );
                loss.evaluate(r.norm_squared()).0
            })
            .sum::<f64>()
    };

    let mut cost = evaluate(centers, log_scales);
    let mut cost_trace = vec![cost];
    let mut iterations = 0;

    for _ in 0..max_iterations {
        if dim == 0 {
            break;
        }
        iterations += 1;

        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        let mut columns: Columns = Vec::with_capacity(7);
        for (m, b) in problem.active.iter().zip(&problem.baselines) {
            columns.clear();
            let r = residual(
                m,
                b,
                centers,
                log_scales,
                &center_slot,
                &scale_slot,
                scale_base,
                Some(&mut columns),
            );
            let (_, w) = loss.evaluate(r.norm_squared());
            for &(p, u) in &columns {
                g[p] += w * u.dot(&r);
                for &(q, v) in &columns {
                    h[(p, q)] += w * u.dot(&v);
                }
            }
        }

        let delta = solve_normal_equations(&h, &g)?;
        let apply = |t: f64| {
            let mut new_centers = centers.clone();
            let mut new_scales = log_scales.clone();
            for (&id, c) in new_centers.iter_mut() {
                if let Some(k) = center_slot[&id] {
                    *c += t * Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2]);
                }
            }
            for (&star, l) in new_scales.iter_mut() {
                if let Some(k) = scale_slot[&star] {
                    *l += t * delta[scale_base + k];
                }
            }
            (new_centers, new_scales)
        };

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..30 {
            let (cand_centers, cand_scales) = apply(t);
            let c = evaluate(&cand_centers, &cand_scales);
            if c < cost {
                accepted = Some((cand_centers, cand_scales, c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand_centers, cand_scales, c)) = accepted else { break };
        let improvement = cost - c;
        *centers = cand_centers;
        *log_scales = cand_scales;
        cost = c;
        cost_trace.push(cost);
        if improvement < tolerance * cost_trace[cost_trace.len() - 2].max(1e-30) {
            break;
        }
    }

    Ok((cost, iterations, cost_trace))
}

/// The solved centers collapsing to a point while the measurements demand a
/// baseline means the problem was contradictory, not solved.
fn check_degeneracy(
    problem: &Problem,
    centers: &BTreeMap<ImageId, Vector3<f64>>,
    scales: &BTreeMap<ImageId, f64>,
    variant: bool,
) -> Result<(), AveragingError> {
    let root_center = centers[&problem.root()];
    let spread = centers
        .values()
        .map(|c| (c - root_center).norm())
        .fold(0.0, f64::max);
    let implied = problem
        .active
        .iter()
        .zip(&problem.baselines)
        .map(|(m, b)| {
            let s = scales[&m.star];
            if variant {
                b.norm() * s
            } else {
                b.norm() / s
            }
        })
        .fold(0.0, f64::max);
    if spread < 1e-12 && implied > 1e-6 {
        return Err(AveragingError::Degenerate(format!(
            "centers collapsed while measurements imply a baseline of {implied}"
        )));
    }
    Ok(())
}

/// Joint center/scale averaging with the scale on the center difference:
/// minimizes `Σ ρ((o·‖b − s_l(c_i − c_j)‖)²)` over centers and log-scales.
pub fn similarity_averaging(
    rotations: &BTreeMap<ImageId, Rotation>,
    measurements: &[RelativeMeasurement],
    config: &SimilarityConfig,
) -> Result<SimilaritySolution, AveragingError> {
    let problem = setup(rotations, measurements)?;
    let (mut centers, init_scales) = initialize(&problem);
    let loss = resolve_loss(config, &problem, &init_scales);
    let mut lambdas: BTreeMap<ImageId, f64> =
        init_scales.iter().map(|(&star, &s)| (star, s.ln())).collect();
    let (cost, iterations, cost_trace) = refine(
        &problem,
        &mut centers,
        &mut lambdas,
        &loss,
        config.tolerance,
        config.max_iterations,
        false,
    )?;
    let scales: BTreeMap<ImageId, f64> =
        lambdas.iter().map(|(&star, &l)| (star, l.exp())).collect();
    check_degeneracy(&problem, &centers, &scales, false)?;
    Ok(SimilaritySolution { centers, scales, cost, iterations, cost_trace })
}

/// The measurement-scaled variant: minimizes
/// `Σ ρ((o·‖s̃_l·b − (c_i − c_j)‖)²)`. Linear in every unknown, so a
/// trivial loss is solved in a single dense least-squares step; robust
/// losses fall back to the same iterative driver as the primal backend.
pub fn similarity_averaging_variant(
    rotations: &BTreeMap<ImageId, Rotation>,
    measurements: &[RelativeMeasurement],
    config: &SimilarityConfig,
) -> Result<SimilaritySolution, AveragingError> {
    let problem = setup(rotations, measurements)?;
    let (init_centers, init_scales) = initialize(&problem);

    if matches!(config.loss, Some(RobustLoss::Trivial)) {
        return variant_linear(&problem);
    }

    let mut centers = init_centers;
    let loss = resolve_loss(config, &problem, &init_scales);
    // The variant scale is the reciprocal of the primal one.
    let mut mus: BTreeMap<ImageId, f64> =
        init_scales.iter().map(|(&star, &s)| (star, -s.ln())).collect();
    let (cost, iterations, cost_trace) = refine(
        &problem,
        &mut centers,
        &mut mus,
        &loss,
        config.tolerance,
        config.max_iterations,
        true,
    )?;
    let scales: BTreeMap<ImageId, f64> =
        mus.iter().map(|(&star, &mu)| (star, mu.exp())).collect();
    check_degeneracy(&problem, &centers, &scales, true)?;
    Ok(SimilaritySolution { centers, scales, cost, iterations, cost_trace })
}

/// One-step dense linear least squares for the trivial-loss variant.
fn variant_linear(problem: &Problem) -> Result<SimilaritySolution, AveragingError> {
    let center_slot: BTreeMap<ImageId, Option<usize>> = problem
        .images
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k.checked_sub(1)))
        .collect();
    let scale_slot: BTreeMap<ImageId, Option<usize>> = problem
        .stars
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k.checked_sub(1)))
        .collect();
    let scale_base = 3 * (problem.images.len() - 1);
    let dim = scale_base + problem.stars.len() - 1;
    let anchor = problem.anchor();

    // Residual rows r̃ = A·x + k with x = [centers; s̃ of non-anchor
    // stars]; the anchor's fixed s̃ = 1 produces the constant part.
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);
    let mut constant_cost = 0.0;
    let mut columns: Columns = Vec::with_capacity(7);
    for (m, b) in problem.active.iter().zip(&problem.baselines) {
        columns.clear();
        let o = m.weight;
        if let Some(c) = center_slot[&m.i] {
            for a in 0..3 {
                let mut u = Vector3::zeros();
                u[a] = -o;
                columns.push((3 * c + a, u));
            }
        }
        if let Some(c) = center_slot[&m.j] {
            for a in 0..3 {
                let mut u = Vector3::zeros();
                u[a] = o;
                columns.push((3 * c + a, u));
            }
        }
        if let Some(k) = scale_slot[&m.star] {
            columns.push((scale_base + k, o * b));
        }
        let k_m = if m.star == anchor { o * b } else { Vector3::zeros() };
        constant_cost += k_m.norm_squared();
        for &(p, u) in &columns {
            g[p] += u.dot(&k_m);
            for &(q, v) in &columns {
                h[(p, q)] += u.dot(&v);
            }
        }
    }

    let x = solve_normal_equations(&h, &g)?;
    let mut centers = BTreeMap::new();
    for (&id, slot) in &center_slot {
        centers.insert(
            id,
            match slot {
                Some(k) => Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]),
                None => Vector3::zeros(),
            },
        );
    }
    let mut scales = BTreeMap::new();
    for (&star, slot) in &scale_slot {
        let s = match slot {
            Some(k) => x[scale_base + k],
            None => 1.0,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(AveragingError::Degenerate(format!(
                "variant scale for star {star} solved to {s}"
            )));
        }
        scales.insert(star, s);
    }

    // Final cost: ‖A·x + k‖² = xᵀHx + 2gᵀx + ‖k‖².
    let cost = (x.transpose() * &h * &x)[(0, 0)] + 2.0 * g.dot(&x) + constant_cost;
    check_degeneracy(&problem, &centers, &scales, true)?;
    Ok(SimilaritySolution {
        centers,
        scales,
        cost,
        iterations: 1,
        cost_trace: vec![constant_cost, cost],
    })
}

/// Cost and exact gradient of the primal objective with respect to every
/// center and every log-scale (no gauge freezing), for finite-difference
/// validation.
#[cfg(test)]
pub(crate) fn cost_and_gradient(
    rotations: &BTreeMap<ImageId, Rotation>,
    measurements: &[RelativeMeasurement],
    centers: &BTreeMap<ImageId, Vector3<f64>>,
    lambdas: &BTreeMap<ImageId, f64>,
    loss: &RobustLoss,
    variant: bool,
) -> (f64, BTreeMap<ImageId, Vector3<f64>>, BTreeMap<ImageId, f64>) {
    let mut cost = 0.0;
    let mut center_grad: BTreeMap<ImageId, Vector3<f64>> =
        centers.keys().map(|&id| (id, Vector3::zeros())).collect();
    let mut scale_grad: BTreeMap<ImageId, f64> =
        lambdas.keys().map(|&id| (id, 0.0)).collect();
    for m in measurements {
        if !positive_weight(m) {
            continue;
        }
        let b = rotations[&m.i]
            .inverse()
            .apply(&m.rotation.inverse().apply(&m.translation));
        let s = lambdas[&m.star].exp();
        let dc = centers[&m.i] - centers[&m.j];
        let (r, dci, dscale): (Vector3<f64>, f64, Vector3<f64>) = if variant {
            ((s * b - dc) * m.weight, -m.weight, (m.weight * s) * b)
        } else {
            ((b - s * dc) * m.weight, -m.weight * s, -(m.weight * s) * dc)
        };
        let (rho, w) = loss.evaluate(r.norm_squared());
        cost += rho;
        *center_grad.get_mut(&m.i).unwrap() += 2.0 * w * dci * r;
        *center_grad.get_mut(&m.j).unwrap() -= 2.0 * w * dci * r;
        *scale_grad.get_mut(&m.star).unwrap() += 2.0 * w * dscale.dot(&r);
    }
    (cost, center_grad, scale_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{collect_measurements, rotation_averaging, RotationConfig};
    use crate::overlap::{star_overlaps, DEFAULT_MIN_OVERLAP, DEFAULT_STRIDE, DEFAULT_TAU};
    use crate::synth::{
        generate_scene, simulate_local_star, NoiseModel, SceneConfig, SyntheticScene, Trajectory,
    };
    use crate::viewgraph::Star;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn measurement(
        star: u32,
        i: u32,
        j: u32,
        rotation: Rotation,
        translation: Vector3<f64>,
        weight: f64,
    ) -> RelativeMeasurement {
        RelativeMeasurement {
            star: ImageId(star),
            i: ImageId(i),
            j: ImageId(j),
            rotation,
            translation,
            weight,
        }
    }

    fn identity_rotations(n: u32) -> BTreeMap<ImageId, Rotation> {
        (0..n).map(|k| (ImageId(k), Rotation::identity())).collect()
    }

    /// Full oracle run: simulate windowed stars over a loop scene, score
    /// them, collect the measurement set, and average the rotations.
    struct OracleRun {
        scene: SyntheticScene,
        locals: Vec<crate::synth::LocalStarReconstruction>,
        measurements: Vec<RelativeMeasurement>,
        rotations: BTreeMap<ImageId, Rotation>,
    }

    fn oracle_run(n: u32, window: i64, seed: u64, noise: &NoiseModel) -> OracleRun {
        let scene = generate_scene(SceneConfig::new(Trajectory::Loop, n, seed)).unwrap();
        let stars: Vec<Star> = (0..n)
            .map(|c| {
                let mut members: Vec<ImageId> = (-window..=window)
                    .map(|d| ImageId((c as i64 + d).rem_euclid(n as i64) as u32))
                    .collect();
                members.sort();
                Star { center: ImageId(c), members }
            })
            .collect();
        let locals: Vec<_> = stars
            .iter()
            .map(|s| simulate_local_star(&scene, s, noise).unwrap())
            .collect();
        let overlaps = star_overlaps(&locals, DEFAULT_TAU, DEFAULT_STRIDE, 1);
        let measurements =
            collect_measurements(&locals, &overlaps, DEFAULT_MIN_OVERLAP, None);
        let rotations = rotation_averaging(&measurements, &RotationConfig::default())
            .unwrap()
            .rotations;
        OracleRun { scene, locals, measurements, rotations }
    }

    /// Predicted center for image `i`: the similarity gauge maps world
    /// centers through the root rotation and the anchor star's gauge scale.
    fn predicted_centers(run: &OracleRun, anchor: ImageId) -> BTreeMap<ImageId, Vector3<f64>> {
        let root = ImageId(0);
        let r0 = run.scene.pose(root).rotation;
        let c0 = run.scene.pose(root).center();
        let kappa = run
            .locals
            .iter()
            .find(|l| l.center() == anchor)
            .unwrap()
            .gauge
            .as_ref()
            .unwrap()
            .scale;
        (0..run.scene.camera_count())
            .map(|k| {
                let c = run.scene.pose(ImageId(k)).center();
                (ImageId(k), kappa * r0.apply(&(c - c0)))
            })
            .collect()
    }

    #[test]
    fn a_single_star_recovers_its_centers_with_unit_scale() {
        let scene = generate_scene(SceneConfig::new(Trajectory::Loop, 12, 3)).unwrap();
        let star = Star { center: ImageId(2), members: (0..5).map(ImageId).collect() };
        let mut noise = NoiseModel::none();
        noise.scale_jitter = (1.7, 1.7);
        let local = simulate_local_star(&scene, &star, &noise).unwrap();
        let mut measurements = Vec::new();
        for (a, &i) in star.members.iter().enumerate() {
            for &j in star.members.iter().skip(a + 1) {
                let rel = local.relative(i, j).unwrap();
                measurements.push(RelativeMeasurement {
                    star: star.center,
                    i,
                    j,
                    rotation: rel.rotation,
                    translation: rel.translation,
                    weight: 1.0,
                });
            }
        }
        let rotations = rotation_averaging(&measurements, &RotationConfig::default())
            .unwrap()
            .rotations;
        let solution =
            similarity_averaging(&rotations, &measurements, &SimilarityConfig::default())
                .unwrap();
        // The single star is its own anchor: scale pinned at exactly 1.
        assert_eq!(solution.scales.len(), 1);
        assert_eq!(solution.scales[&ImageId(2)], 1.0);
        // Centers match the star's own (scaled) geometry rotated into the
        // root camera frame, root at the origin.
        let root_pose = local.pose(ImageId(0)).unwrap();
        let root_center = root_pose.center();
        for (&id, center) in &solution.centers {
            let expected = root_pose
                .rotation
                .apply(&(local.pose(id).unwrap().center() - root_center));
            assert!(
                (center - expected).norm() < 1e-8,
                "image {id}: got {center:?}, expected {expected:?}"
            );
        }
        assert!(solution.cost < 1e-16);
    }

    #[test]
    fn a_star_generated_at_twice_the_scale_recovers_scale_two() {
        // Three collinear cameras at x = 0, 1, 2. Star 0 measures both of
        // its baselines in metric units and anchors the gauge; star 2
        // measures the 1-2 baseline with its own gauge at twice the metric
        // scale, so its translation comes out twice as long. The recovered
        // scale is the factor that maps center differences back into that
        // star's units: s_B = 2.
        let rotations = identity_rotations(3);
        let measurements = vec![
            measurement(0, 0, 1, Rotation::identity(), Vector3::new(-1.0, 0.0, 0.0), 1.0),
            measurement(0, 0, 2, Rotation::identity(), Vector3::new(-2.0, 0.0, 0.0), 1.0),
            measurement(2, 1, 2, Rotation::identity(), Vector3::new(-2.0, 0.0, 0.0), 1.0),
        ];
        let solution =
            similarity_averaging(&rotations, &measurements, &SimilarityConfig::default())
                .unwrap();
        assert!((solution.scales[&ImageId(0)] - 1.0).abs() == 0.0);
        let ratio = solution.scales[&ImageId(2)] / solution.scales[&ImageId(0)];
        assert!((ratio - 2.0).abs() < 1e-9, "scale ratio {ratio}");
        let expected = [0.0, 1.0, 2.0];
        for (k, &x) in expected.iter().enumerate() {
            let c = solution.centers[&ImageId(k as u32)];
            assert!((c - Vector3::new(x, 0.0, 0.0)).norm() < 1e-9, "camera {k}: {c:?}");
        }
        // The variant convention is the reciprocal: s̃_B = 0.5.
        let variant = similarity_averaging_variant(
            &rotations,
            &measurements,
            &SimilarityConfig { loss: Some(RobustLoss::Trivial), ..Default::default() },
        )
        .unwrap();
        assert!((variant.scales[&ImageId(2)] - 0.5).abs() < 1e-9);
        assert!((variant.scales[&ImageId(0)] - 1.0).abs() == 0.0);
    }

    #[test]
    fn noiseless_oracle_recovery_and_backend_agreement() {
        let mut noise = NoiseModel::none();
        noise.scale_jitter = (0.5, 2.0);
        let run = oracle_run(10, 2, 9, &noise);
        let anchor = run.measurements.iter().map(|m| m.star).min().unwrap();

        let primal =
            similarity_averaging(&run.rotations, &run.measurements, &SimilarityConfig::default())
                .unwrap();
        let variant = similarity_averaging_variant(
            &run.rotations,
            &run.measurements,
            &SimilarityConfig { loss: Some(RobustLoss::Trivial), ..Default::default() },
        )
        .unwrap();

        // Both backends recover the predicted centers.
        let predicted = predicted_centers(&run, anchor);
        let diameter = run.scene.diameter();
        for (&id, center) in &primal.centers {
            let err = (center - predicted[&id]).norm();
            assert!(err < 1e-8 * diameter.max(1.0), "primal image {id} off by {err}");
        }
        // Per-pair center differences agree across backends.
        let images: Vec<ImageId> = primal.centers.keys().copied().collect();
        for (a, &i) in images.iter().enumerate() {
            for &j in images.iter().skip(a + 1) {
                let dp = primal.centers[&i] - primal.centers[&j];
                let dv = variant.centers[&i] - variant.centers[&j];
                assert!((dp - dv).norm() < 1e-8 * diameter.max(1.0), "pair ({i}, {j})");
            }
        }
        // Scale conventions are reciprocal, and each star's primal scale
        // matches its generated gauge relative to the anchor.
        let anchor_gauge = run
            .locals
            .iter()
            .find(|l| l.center() == anchor)
            .unwrap()
            .gauge
            .as_ref()
            .unwrap()
            .scale;
        for (star, s) in &primal.scales {
            let s_tilde = variant.scales[star];
            assert!((s * s_tilde - 1.0).abs() < 1e-9, "star {star}: s·s̃ = {}", s * s_tilde);
            let generated = run
                .locals
                .iter()
                .find(|l| l.center() == *star)
                .unwrap()
                .gauge
                .as_ref()
                .unwrap()
                .scale;
            let expected = generated / anchor_gauge;
            assert!(
                (s / expected - 1.0).abs() < 1e-9,
                "star {star}: recovered {s}, generated ratio {expected}"
            );
        }

        // Rescaling the depth rasters by the recovered scales makes them
        // globally consistent: every raster equals the metric render times
        // the anchor's gauge scale.
        let mut locals = run.locals.clone();
        crate::averaging::rescale_depths(&mut locals, &primal.scales).unwrap();
        let mut checked = 0usize;
        for local in &locals {
            for (&member, depth) in &local.depths {
                let truth = run.scene.render_depth(member);
                for (got, want) in depth.values().iter().zip(truth.values()) {
                    if *want > 0.0 && *got > 0.0 {
                        let rel = (got / (anchor_gauge * want) - 1.0).abs();
                        assert!(rel < 1e-9, "member {member}: relative error {rel}");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 1000, "rescaling checked only {checked} pixels");
    }

    #[test]
    fn trivial_loss_variant_matches_a_stacked_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n_images = 6u32;
        let n_stars = 3u32;
        let rotations: BTreeMap<ImageId, Rotation> = (0..n_images)
            .map(|k| {
                let axis = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                (ImageId(k), Rotation::from_axis_angle(&axis, rng.gen_range(0.1..2.0)))
            })
            .collect();
        let mut measurements = Vec::new();
        for star in 0..n_stars {
            for i in 0..n_images {
                for j in (i + 1)..n_images {
                    // Non-anchor stars keep their chain edges so every
                    // star certainly contributes measurements.
                    if star > 0 && j != i + 1 && rng.gen_bool(0.5) {
                        continue;
                    }
                    let noise = Vector3::new(
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                        rng.gen_range(-0.05..0.05),
                    );
                    let b = Vector3::new(
                        (j - i) as f64 * 0.7,
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ) + noise;
                    // translation = R_ij · R̂_i · b inverts the baseline map.
                    let rel = rotations[&ImageId(j)]
                        .compose(&rotations[&ImageId(i)].inverse());
                    let t = rel.apply(&rotations[&ImageId(i)].apply(&b));
                    measurements.push(measurement(
                        star * 2,
                        i,
                        j,
                        rel,
                        t,
                        rng.gen_range(0.2..1.0),
                    ));
                }
            }
        }

        let config =
            SimilarityConfig { loss: Some(RobustLoss::Trivial), ..Default::default() };
        let solution =
            similarity_averaging_variant(&rotations, &measurements, &config).unwrap();

        // Independent oracle: stack the residual rows and solve by SVD.
        let images: Vec<ImageId> = (0..n_images).map(ImageId).collect();
        let stars: Vec<ImageId> = (0..n_stars).map(|s| ImageId(s * 2)).collect();
        let dim = 3 * (images.len() - 1) + stars.len() - 1;
        let rows = 3 * measurements.len();
        let mut a = DMatrix::<f64>::zeros(rows, dim);
        let mut y = DVector::<f64>::zeros(rows);
        for (mi, m) in measurements.iter().enumerate() {
            let b = rotations[&m.i]
                .inverse()
                .apply(&m.rotation.inverse().apply(&m.translation));
            let o = m.weight;
            let row = 3 * mi;
            let islot = images.iter().position(|&x| x == m.i).unwrap();
            let jslot = images.iter().position(|&x| x == m.j).unwrap();
            for axis in 0..3 {
                if islot > 0 {
                    a[(row + axis, 3 * (islot - 1) + axis)] = -o;
                }
                if jslot > 0 {
                    a[(row + axis, 3 * (jslot - 1) + axis)] = o;
                }
            }
            let sslot = stars.iter().position(|&x| x == m.star).unwrap();
            if sslot > 0 {
                for axis in 0..3 {
                    a[(row + axis, 3 * (images.len() - 1) + sslot - 1)] = o * b[axis];
                }
            } else {
                for axis in 0..3 {
                    y[row + axis] = -o * b[axis];
                }
            }
        }
        let x = a.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        for (k, &id) in images.iter().enumerate().skip(1) {
            let oracle = Vector3::new(x[3 * (k - 1)], x[3 * (k - 1) + 1], x[3 * (k - 1) + 2]);
            let got = solution.centers[&id];
            assert!((got - oracle).norm() < 1e-8, "image {id}: {got:?} vs {oracle:?}");
        }
        for (k, &star) in stars.iter().enumerate().skip(1) {
            let oracle = x[3 * (images.len() - 1) + k - 1];
            let got = solution.scales[&star];
            assert!((got - oracle).abs() < 1e-8, "star {star}: {got} vs {oracle}");
        }
        assert_eq!(solution.iterations, 1);
    }

    #[test]
    fn rotating_the_input_gauge_rotates_the_centers() {
        let mut noise = NoiseModel::none();
        noise.center_sigma_frac = 0.005;
        noise.scale_jitter = (0.8, 1.25);
        let run = oracle_run(12, 2, 21, &noise);
        let base =
            similarity_averaging(&run.rotations, &run.measurements, &SimilarityConfig::default())
                .unwrap();
        // A different rotation-averaging gauge right-multiplies every
        // rotation by a common factor; centers must co-rotate, scales and
        // cost must not move.
        let g = Rotation::from_axis_angle(&Vector3::new(0.3, -1.0, 0.5), 1.1);
        let regauged: BTreeMap<ImageId, Rotation> = run
            .rotations
            .iter()
            .map(|(&id, r)| (id, r.compose(&g)))
            .collect();
        let turned =
            similarity_averaging(&regauged, &run.measurements, &SimilarityConfig::default())
                .unwrap();
        for (&id, c) in &base.centers {
            let expected = g.inverse().apply(c);
            assert!(
                (turned.centers[&id] - expected).norm() < 1e-9 * (1.0 + c.norm()),
                "image {id}"
            );
        }
        for (star, s) in &base.scales {
            assert!((turned.scales[star] - s).abs() < 1e-9 * s);
        }
        assert!((turned.cost - base.cost).abs() < 1e-9 * base.cost.max(1e-12));
    }

    #[test]
    fn zero_weight_measurements_have_no_influence() {
        let mut noise = NoiseModel::none();
        noise.center_sigma_frac = 0.01;
        let run = oracle_run(12, 2, 33, &noise);
        let base =
            similarity_averaging(&run.rotations, &run.measurements, &SimilarityConfig::default())
                .unwrap();
        let mut with_outlier = run.measurements.clone();
        with_outlier.insert(
            3,
            measurement(0, 1, 5, Rotation::identity(), Vector3::new(9.0, -9.0, 9.0), 0.0),
        );
        let solution =
            similarity_averaging(&run.rotations, &with_outlier, &SimilarityConfig::default())
                .unwrap();
        for (&id, c) in &base.centers {
            assert!((solution.centers[&id] - c).norm() < 1e-9);
        }
        for (star, s) in &base.scales {
            assert!((solution.scales[star] - s).abs() < 1e-9);
        }
        assert!((solution.cost - base.cost).abs() < 1e-9);
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // Losses with scales comparable to the residuals: a far-saturated
        // arctan flattens the objective to the point where the comparison
        // dives below finite-difference resolution.
        let losses = [RobustLoss::Trivial, RobustLoss::huber(0.05), RobustLoss::arctan(0.7)];
        for point in 0..20 {
            let variant = point % 2 == 1;
            let n = 4u32;
            let rotations: BTreeMap<ImageId, Rotation> = (0..n)
                .map(|k| {
                    let axis = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    (ImageId(k), Rotation::from_axis_angle(&axis, rng.gen_range(0.1..2.0)))
                })
                .collect();
            let mut measurements = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let t = Vector3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    );
                    measurements.push(measurement(
                        i % 2,
                        i,
                        j,
                        rotations[&ImageId(j)].compose(&rotations[&ImageId(i)].inverse()),
                        t,
                        rng.gen_range(0.2..1.0),
                    ));
                }
            }
            let centers: BTreeMap<ImageId, Vector3<f64>> = (0..n)
                .map(|k| {
                    (
                        ImageId(k),
                        Vector3::new(
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-2.0..2.0),
                        ),
                    )
                })
                .collect();
            let lambdas: BTreeMap<ImageId, f64> =
                (0..2).map(|k| (ImageId(k), rng.gen_range(-0.7..0.7))).collect();
            let loss = &losses[point % losses.len()];

            let (_, center_grad, scale_grad) = cost_and_gradient(
                &rotations, &measurements, &centers, &lambdas, loss, variant,
            );
            let cost_at = |centers: &BTreeMap<ImageId, Vector3<f64>>,
                           lambdas: &BTreeMap<ImageId, f64>| {
                cost_and_gradient(&rotations, &measurements, centers, lambdas, loss, variant).0
            };
            let h = 1e-6;
            for (&id, grad) in &center_grad {
                for axis in 0..3 {
                    let mut plus = centers.clone();
                    plus.get_mut(&id).unwrap()[axis] += h;
                    let mut minus = centers.clone();
                    minus.get_mut(&id).unwrap()[axis] -= h;
                    let fd = (cost_at(&plus, &lambdas) - cost_at(&minus, &lambdas)) / (2.0 * h);
                    let denominator = grad[axis].abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (grad[axis] - fd).abs() / denominator < 1e-5,
                        "point {point} center {id} axis {axis}: {} vs {fd}",
                        grad[axis]
                    );
                }
            }
            for (&star, grad) in &scale_grad {
                let mut plus = lambdas.clone();
                *plus.get_mut(&star).unwrap() += h;
                let mut minus = lambdas.clone();
                *minus.get_mut(&star).unwrap() -= h;
                let fd = (cost_at(&centers, &plus) - cost_at(&centers, &minus)) / (2.0 * h);
                let denominator = grad.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (grad - fd).abs() / denominator < 1e-5,
                    "point {point} star {star}: {grad} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn center_noise_stays_within_the_propagated_bound() {
        let mut noise = NoiseModel::none();
        noise.center_sigma_frac = 0.01;
        noise.scale_jitter = (0.8, 1.25);
        let run = oracle_run(12, 3, 57, &noise);
        let anchor = run.measurements.iter().map(|m| m.star).min().unwrap();
        let solution =
            similarity_averaging(&run.rotations, &run.measurements, &SimilarityConfig::default())
                .unwrap();
        let predicted = predicted_centers(&run, anchor);
        let kappa = run
            .locals
            .iter()
            .find(|l| l.center() == anchor)
            .unwrap()
            .gauge
            .as_ref()
            .unwrap()
            .scale;
        let mut errors: Vec<f64> = solution
            .centers
            .iter()
            .map(|(id, c)| (c - predicted[id]).norm())
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        // Per-member center noise is N(0, (0.01·b̄)²) per component in
        // world units; each solved center averages several measurements,
        // so its median error stays below three of the single-measurement
        // sigma (chi distribution with 3 degrees of freedom: mean ≈ 1.6σ).
        let mean_baseline = {
            let mut total = 0.0;
            let mut count = 0usize;
            let members = run.locals[0].members();
            for (a, &i) in members.iter().enumerate() {
                for &j in members.iter().skip(a + 1) {
                    total += (run.scene.pose(i).center() - run.scene.pose(j).center()).norm();
                    count += 1;
                }
            }
            total / count as f64
        };
        let sigma = 0.01 * mean_baseline * kappa;
        assert!(median > 0.0, "noise should leave a visible error");
        assert!(
            median < 3.0 * 1.6 * sigma,
            "median center error {median} vs bound {}",
            3.0 * 1.6 * sigma
        );
    }

    #[test]
    fn contradictory_measurements_are_flagged_degenerate() {
        let rotations = identity_rotations(2);
        // The same star measures the same pair with opposite baselines;
        // its scale is the anchored one, so the optimum can only collapse
        // both centers onto one point.
        let measurements = vec![
            measurement(0, 0, 1, Rotation::identity(), Vector3::new(1.0, 0.0, 0.0), 1.0),
            measurement(0, 0, 1, Rotation::identity(), Vector3::new(-1.0, 0.0, 0.0), 1.0),
        ];
        let result = similarity_averaging(
            &rotations,
            &measurements,
            &SimilarityConfig { loss: Some(RobustLoss::Trivial), ..Default::default() },
        );
        assert!(matches!(result, Err(AveragingError::Degenerate(_))), "got {result:?}");
    }

    #[test]
    fn missing_rotations_and_disconnection_are_rejected() {
        let only_two = identity_rotations(2);
        let split = vec![
            measurement(0, 0, 1, Rotation::identity(), Vector3::x(), 1.0),
            measurement(0, 2, 3, Rotation::identity(), Vector3::x(), 1.0),
        ];
        assert!(matches!(
            similarity_averaging(&identity_rotations(4), &split, &SimilarityConfig::default()),
            Err(AveragingError::Disconnected { components: 2 })
        ));
        let one = vec![measurement(0, 0, 2, Rotation::identity(), Vector3::x(), 1.0)];
        assert!(matches!(
            similarity_averaging(&only_two, &one, &SimilarityConfig::default()),
            Err(AveragingError::MissingRotation(ImageId(2)))
        ));
        assert!(matches!(
            similarity_averaging(&only_two, &[], &SimilarityConfig::default()),
            Err(AveragingError::NoMeasurements)
        ));
    }

    #[test]
    fn accepted_costs_decrease_monotonically() {
        let mut noise = NoiseModel::none();
        noise.center_sigma_frac = 0.02;
        noise.scale_jitter = (0.6, 1.6);
        let run = oracle_run(10, 2, 77, &noise);
        let solution =
            similarity_averaging(&run.rotations, &run.measurements, &SimilarityConfig::default())
                .unwrap();
        assert!(solution.cost_trace.len() >= 2);
        for pair in solution.cost_trace.windows(2) {
            assert!(pair[1] < pair[0] + 1e-15, "cost went up: {pair:?}");
        }
    }
}
