//! Joint refinement of camera poses, focal lengths and track points.
//!
//! A Levenberg–Marquardt solver with dense point-block elimination. All
//! registered images, all shared focal groups and the 3D points of
//! triangulated tracks move together; points of virtual tracks are known by
//! construction and stay fixed, acting as anchors that tie the refinement to
//! the per-star depth evidence. Classical and feedforward tracks are scored
//! under one robust loss, virtual tracks under a saturating one, so a virtual
//! observation that disagrees badly with the moving geometry fades out
//! instead of dragging it.
//!
//! The gauge is fixed structurally: the lowest-id pose is frozen entirely,
//! and the center of the second-lowest image moves only orthogonally to its
//! offset from the first, which pins the global scale to the distance
//! between the two lowest-id centers.

mod residual;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::geom::{Pose, RobustLoss, Rotation};
use crate::ids::{CameraId, ImageId};
use crate::par::parallel_map;
use crate::tracks::TrackSet;
use crate::viewgraph::UnionFind;

use residual::reprojection_residual;

/// Scale of the default robust loss on classical and feedforward
/// observations, in pixels of reprojection error.
pub const DEFAULT_STANDARD_LOSS_SCALE: f64 = 1.0;

/// Scale of the default saturating loss on virtual observations, in pixels.
pub const DEFAULT_VIRTUAL_LOSS_SCALE: f64 = 4.0;

const MIN_DIAG: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e32;

/// Everything the refinement needs: poses, focal groups, the image raster
/// size (the principal point sits at the raster center) and the tracks.
/// Every track must carry a 3D point; triangulate the non-virtual ones
/// first.
#[derive(Debug, Clone)]
pub struct BAProblem {
    pub poses: BTreeMap<ImageId, Pose>,
    /// One focal length per camera group, shared by all images assigned to
    /// that group.
    pub focals: BTreeMap<CameraId, f64>,
    /// Group assignment for every posed image.
    pub cameras: BTreeMap<ImageId, CameraId>,
    pub width: u32,
    pub height: u32,
    pub tracks: TrackSet,
}

impl BAProblem {
    /// Convenience constructor for the common case of a single focal length
    /// shared by every image.
    pub fn with_shared_camera(
        poses: BTreeMap<ImageId, Pose>,
        focal: f64,
        width: u32,
        height: u32,
        tracks: TrackSet,
    ) -> Self {
        let cameras = poses.keys().map(|&i| (i, CameraId(0))).collect();
        let mut focals = BTreeMap::new();
        focals.insert(CameraId(0), focal);
        BAProblem { poses, focals, cameras, width, height, tracks }
    }

    fn principal_point(&self) -> (f64, f64) {
        (
            f64::from(self.width.saturating_sub(1)) / 2.0,
            f64::from(self.height.saturating_sub(1)) / 2.0,
        )
    }
}

#[derive(Debug, Clone)]
pub struct BAConfig {
    /// When false, focal lengths are held at their input values.
    pub refine_focals: bool,
    /// Loss on classical and feedforward observations, evaluated on the
    /// squared pixel error.
    pub standard_loss: RobustLoss,
    /// Loss on virtual observations; should saturate so that a virtual
    /// prior that loses the argument stops pulling.
    pub virtual_loss: RobustLoss,
    /// Cap on accepted steps.
    pub max_iterations: usize,
    /// An accepted step that lowers the cost by less than this fraction of
    /// it ends the solve.
    pub cost_tolerance: f64,
    /// Infinity norm of the gradient below which the state counts as
    /// stationary.
    pub gradient_tolerance: f64,
    /// Initial Levenberg–Marquardt damping, scaled by the Jacobian diagonal.
    pub initial_damping: f64,
    /// Worker threads for residual evaluation. The result is bit-identical
    /// for any count.
    pub threads: usize,
}

impl Default for BAConfig {
    fn default() -> Self {
        BAConfig {
            refine_focals: true,
            standard_loss: RobustLoss::huber(DEFAULT_STANDARD_LOSS_SCALE),
            virtual_loss: RobustLoss::arctan(DEFAULT_VIRTUAL_LOSS_SCALE),
            max_iterations: 100,
            cost_tolerance: 1e-12,
            gradient_tolerance: 1e-12,
            initial_damping: 1e-4,
            threads: 1,
        }
    }
}

/// Why the solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// An accepted step barely changed the cost, or damping grew past the
    /// point where any representable step could.
    CostConverged,
    /// The gradient vanished; the state is stationary.
    GradientConverged,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct BAReport {
    /// Number of accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    /// Non-increasing by construction.
    #[serde(skip)]
    pub accepted_costs: Vec<f64>,
}

/// The refined output: poses and focals keyed as in the problem, and the
/// input tracks with refined points written back. Points of virtual tracks
/// are bit-identical to their inputs.
#[derive(Debug, Clone)]
pub struct GlobalReconstruction {
    pub poses: BTreeMap<ImageId, Pose>,
    pub focals: BTreeMap<CameraId, f64>,
    pub tracks: TrackSet,
}

#[derive(Debug, Error)]
pub enum BAError {
    #[error("refinement needs at least one track")]
    NoTracks,
    #[error("track {track} observes image {image}, which has no pose")]
    MissingPose { track: usize, image: ImageId },
    #[error("image {0} is not assigned to a camera group")]
    MissingCamera(ImageId),
    #[error("camera group {0} has no focal length")]
    MissingFocal(CameraId),
    #[error("focal length of camera group {0} is {1}, expected finite and positive")]
    BadFocal(CameraId, f64),
    #[error("pose of image {0} is not finite")]
    BadPose(ImageId),
    #[error("track {0} carries no 3D point; triangulate it before refining")]
    MissingPoint(usize),
    #[error("point of track {0} is not finite")]
    BadPoint(usize),
    #[error("observations split the posed images into {0} disconnected groups")]
    Disconnected(usize),
    #[error("residual of track {track} in image {image} is not finite")]
    NonFinite { track: usize, image: ImageId },
}

/// Refines the problem in place of nothing — the input is untouched — and
/// returns the refined reconstruction together with a solve report.
pub fn bundle_adjust(
    problem: &BAProblem,
    config: &BAConfig,
) -> Result<(GlobalReconstruction, BAReport), BAError> {
    let (layout, meta, mut state, variable) = prepare(problem, config)?;
    let (cx, cy) = problem.principal_point();

    let mut cost = total_cost(&meta, &state, cx, cy, config.threads)
        .map_err(|(track, image)| BAError::NonFinite { track, image })?;
    let initial_cost = cost;
    let mut accepted_costs = vec![cost];
    let mut damping = config.initial_damping;
    let mut nu = 2.0;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < config.max_iterations {
        let system = linearize(&layout, &meta, &variable, &state, cx, cy, config)
            .map_err(|(track, image)| BAError::NonFinite { track, image })?;
        if system.gradient_inf < config.gradient_tolerance {
            termination = Termination::GradientConverged;
            break;
        }

        loop {
            if damping > MAX_DAMPING {
                termination = Termination::CostConverged;
                break 'outer;
            }
            let Some(step) = solve_damped(&system, damping) else {
                damping *= nu;
                nu *= 2.0;
                continue;
            };
            let Some(candidate) = apply_step(&state, &layout, &system.basis, &step) else {
                damping *= nu;
                nu *= 2.0;
                continue;
            };
            let candidate_cost = match total_cost(&meta, &candidate, cx, cy, config.threads) {
                Ok(value) => value,
                Err(_) => {
                    damping *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            if candidate_cost < cost {
                let drop = cost - candidate_cost;
                let gain = drop / step.predicted.max(f64::MIN_POSITIVE);
                state = candidate;
                cost = candidate_cost;
                iterations += 1;
                accepted_costs.push(cost);
                damping *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                if drop <= config.cost_tolerance * (cost + drop).max(f64::MIN_POSITIVE) {
                    termination = Termination::CostConverged;
                    break 'outer;
                }
                break;
            }
            damping *= nu;
            nu *= 2.0;
        }
    }

    let mut poses = BTreeMap::new();
    for (slot, &image) in layout.images.iter().enumerate() {
        poses.insert(
            image,
            Pose::from_rotation_center(state.rotations[slot], state.centers[slot]),
        );
    }
    let mut focals = BTreeMap::new();
    for (slot, &group) in layout.groups.iter().enumerate() {
        focals.insert(group, state.focals[slot]);
    }
    let mut tracks = problem.tracks.clone();
    for (t, track) in tracks.tracks.iter_mut().enumerate() {
        if variable[t] {
            track.point = Some(state.points[t]);
        }
    }

    let report = BAReport {
        iterations,
        initial_cost,
        final_cost: cost,
        termination,
        accepted_costs,
    };
    Ok((GlobalReconstruction { poses, focals, tracks }, report))
}

// ---------------------------------------------------------------------------
// Problem preparation.

/// Which parameters each image and focal group owns.
struct Layout {
    images: Vec<ImageId>,
    groups: Vec<CameraId>,
    /// Start of each image's parameter run.
    pose_offset: Vec<usize>,
    /// 0 for the frozen first image, 5 for the second (its center moves in a
    /// 2D tangent), 6 for the rest.
    pose_dof: Vec<usize>,
    /// Start of the focal block, present only when focals are refined.
    focal_base: Option<usize>,
    camera_params: usize,
}

#[derive(Clone)]
struct State {
    rotations: Vec<Rotation>,
    centers: Vec<Vector3<f64>>,
    focals: Vec<f64>,
    points: Vec<Vector3<f64>>,
}

struct ObsMeta {
    image: ImageId,
    image_slot: usize,
    group_slot: usize,
    pixel: Vector2<f64>,
}

struct TrackMeta {
    obs: Vec<ObsMeta>,
    loss: RobustLoss,
}

type Prepared = (Layout, Vec<TrackMeta>, State, Vec<bool>);

fn prepare(problem: &BAProblem, config: &BAConfig) -> Result<Prepared, BAError> {
    if problem.tracks.is_empty() {
        return Err(BAError::NoTracks);
    }

    let images: Vec<ImageId> = problem.poses.keys().copied().collect();
    let image_slot: BTreeMap<ImageId, usize> =
        images.iter().enumerate().map(|(slot, &image)| (image, slot)).collect();
    let groups: Vec<CameraId> = problem.focals.keys().copied().collect();
    let group_slot: BTreeMap<CameraId, usize> =
        groups.iter().enumerate().map(|(slot, &group)| (group, slot)).collect();

    for (&group, &focal) in &problem.focals {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(BAError::BadFocal(group, focal));
        }
    }

    let mut rotations = Vec::with_capacity(images.len());
    let mut centers = Vec::with_capacity(images.len());
    let mut image_group = Vec::with_capacity(images.len());
    for &image in &images {
        let pose = &problem.poses[&image];
        let center = pose.center();
        let finite = pose.rotation.quaternion_wxyz().iter().all(|v| v.is_finite())
            && center.iter().all(|v| v.is_finite());
        if !finite {
            return Err(BAError::BadPose(image));
        }
        let group = *problem.cameras.get(&image).ok_or(BAError::MissingCamera(image))?;
        let slot = *group_slot.get(&group).ok_or(BAError::MissingFocal(group))?;
        rotations.push(pose.rotation);
        centers.push(center);
        image_group.push(slot);
    }

    let mut meta = Vec::with_capacity(problem.tracks.len());
    let mut points = Vec::with_capacity(problem.tracks.len());
    let mut variable = Vec::with_capacity(problem.tracks.len());
    let mut connectivity = UnionFind::new(images.len());
    for (t, track) in problem.tracks.iter().enumerate() {
        let point = track.point.ok_or(BAError::MissingPoint(t))?;
        if !point.iter().all(|v| v.is_finite()) {
            return Err(BAError::BadPoint(t));
        }
        let mut obs = Vec::with_capacity(track.len());
        for observation in &track.observations {
            let slot = *image_slot
                .get(&observation.image)
                .ok_or(BAError::MissingPose { track: t, image: observation.image })?;
            obs.push(ObsMeta {
                image: observation.image,
                image_slot: slot,
                group_slot: image_group[slot],
                pixel: observation.pixel,
            });
        }
        for pair in obs.windows(2) {
            connectivity.union(pair[0].image_slot, pair[1].image_slot);
        }
        let loss = if track.class.is_virtual() {
            config.virtual_loss
        } else {
            config.standard_loss
        };
        meta.push(TrackMeta { obs, loss });
        points.push(point);
        variable.push(!track.class.is_virtual());
    }
    let components = connectivity.component_count();
    if components > 1 {
        return Err(BAError::Disconnected(components));
    }

    let mut pose_offset = Vec::with_capacity(images.len());
    let mut pose_dof = Vec::with_capacity(images.len());
    let mut next = 0usize;
    for slot in 0..images.len() {
        let dof = match slot {
            0 => 0,
            1 => 5,
            _ => 6,
        };
        pose_offset.push(next);
        pose_dof.push(dof);
        next += dof;
    }
    let focal_base = config.refine_focals.then_some(next);
    let camera_params = next + if config.refine_focals { groups.len() } else { 0 };

    let layout = Layout { images, groups, pose_offset, pose_dof, focal_base, camera_params };
    let focals = layout.groups.iter().map(|group| problem.focals[group]).collect();
    let state = State { rotations, centers, focals, points };
    Ok((layout, meta, state, variable))
}

// ---------------------------------------------------------------------------
// Residual evaluation.

/// Sum of robust costs over all tracks. `Err` carries the (track,
/// image) of the first non-finite residual in track order.
fn total_cost(
    meta: &[TrackMeta],
    state: &State,
    cx: f64,
    cy: f64,
    threads: usize,
) -> Result<f64, (usize, ImageId)> {
    let indices: Vec<usize> = (0..meta.len()).collect();
    let per_track = parallel_map(&indices, threads, |&t| track_cost(&meta[t], state, t, cx, cy));
    let mut total = 0.0;
    for result in per_track {
        total += result?;
    }
    Ok(total)
}

fn track_cost(
    meta: &TrackMeta,
    state: &State,
    track: usize,
    cx: f64,
    cy: f64,
) -> Result<f64, (usize, ImageId)> {
    let point = &state.points[track];
    let mut cost = 0.0;
    for obs in &meta.obs {
        let Some(block) = reprojection_residual(
            &state.rotations[obs.image_slot],
            &state.centers[obs.image_slot],
            state.focals[obs.group_slot],
            cx,
            cy,
            point,
            &obs.pixel,
        ) else {
            continue;
        };
        let s = block.residual.norm_squared();
        if !s.is_finite() {
            return Err((track, obs.image));
        }
        let (rho, _) = meta.loss.evaluate(s);
        cost += rho;
    }
    Ok(cost)
}

struct ObsEval {
    image_slot: usize,
    group_slot: usize,
    /// Robustified observation weight `2 rho'(s)`.
    weight: f64,
    residual: Vector2<f64>,
    rot: Matrix2x3<f64>,
    center: Matrix2x3<f64>,
    focal: Vector2<f64>,
    point: Matrix2x3<f64>,
}

struct TrackEval {
    cost: f64,
    obs: Vec<ObsEval>,
}

fn track_blocks(
    meta: &TrackMeta,
    state: &State,
    track: usize,
    cx: f64,
    cy: f64,
) -> Result<TrackEval, (usize, ImageId)> {
    let point = &state.points[track];
    let mut eval = TrackEval { cost: 0.0, obs: Vec::with_capacity(meta.obs.len()) };
    for obs in &meta.obs {
        let Some(block) = reprojection_residual(
            &state.rotations[obs.image_slot],
            &state.centers[obs.image_slot],
            state.focals[obs.group_slot],
            cx,
            cy,
            point,
            &obs.pixel,
        ) else {
            continue;
        };
        let s = block.residual.norm_squared();
        if !s.is_finite() {
            return Err((track, obs.image));
        }
        let (rho, rho_prime) = meta.loss.evaluate(s);
        eval.cost += rho;
        eval.obs.push(ObsEval {
            image_slot: obs.image_slot,
            group_slot: obs.group_slot,
            weight: 2.0 * rho_prime,
            residual: block.residual,
            rot: block.wrt_rotation,
            center: block.wrt_center,
            focal: block.wrt_focal,
            point: block.wrt_point,
        });
    }
    Ok(eval)
}

// ---------------------------------------------------------------------------
// Normal equations with point blocks kept separate for elimination.

struct PointBlock {
    track: usize,
    v: Matrix3<f64>,
    g: Vector3<f64>,
    /// Rows of the camera–point coupling, keyed by camera parameter index;
    /// sorted, so accumulation order is reproducible.
    w: Vec<(usize, Vector3<f64>)>,
}

struct LinearSystem {
    h: DMatrix<f64>,
    g: DVector<f64>,
    blocks: Vec<PointBlock>,
    gradient_inf: f64,
    /// Tangent basis of the second image's center at this linearization.
    basis: Matrix3x2<f64>,
}

/// Orthonormal pair spanning the plane orthogonal to `d`; any fixed plane
/// when `d` vanishes.
fn center_tangent_basis(d: &Vector3<f64>) -> Matrix3x2<f64> {
    let dir = if d.norm() < 1e-12 { Vector3::x() } else { d.normalize() };
    let seed = if dir.x.abs() <= dir.y.abs() && dir.x.abs() <= dir.z.abs() {
        Vector3::x()
    } else if dir.y.abs() <= dir.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = (seed - dir * seed.dot(&dir)).normalize();
    let b2 = dir.cross(&b1);
    Matrix3x2::from_columns(&[b1, b2])
}

fn linearize(
    layout: &Layout,
    meta: &[TrackMeta],
    variable: &[bool],
    state: &State,
    cx: f64,
    cy: f64,
    config: &BAConfig,
) -> Result<LinearSystem, (usize, ImageId)> {
    let indices: Vec<usize> = (0..meta.len()).collect();
    let evals = parallel_map(&indices, config.threads, |&t| {
        track_blocks(&meta[t], state, t, cx, cy)
    });

    let basis = if layout.images.len() > 1 {
        center_tangent_basis(&(state.centers[1] - state.centers[0]))
    } else {
        center_tangent_basis(&Vector3::zeros())
    };

    let n = layout.camera_params;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut blocks = Vec::new();
    let mut columns: Vec<(usize, Vector2<f64>)> = Vec::with_capacity(7);

    for (t, eval) in evals.into_iter().enumerate() {
        let eval = eval?;
        let mut v = Matrix3::zeros();
        let mut gp = Vector3::zeros();
        let mut w: BTreeMap<usize, Vector3<f64>> = BTreeMap::new();
        for obs in &eval.obs {
            columns.clear();
            let offset = layout.pose_offset[obs.image_slot];
            match layout.pose_dof[obs.image_slot] {
                0 => {}
                5 => {
                    for axis in 0..3 {
                        columns.push((offset + axis, obs.rot.column(axis).into_owned()));
                    }
                    let projected = obs.center * basis;
                    columns.push((offset + 3, projected.column(0).into_owned()));
                    columns.push((offset + 4, projected.column(1).into_owned()));
                }
                6 => {
                    for axis in 0..3 {
                        columns.push((offset + axis, obs.rot.column(axis).into_owned()));
                    }
                    for axis in 0..3 {
                        columns.push((offset + 3 + axis, obs.center.column(axis).into_owned()));
                    }
                }
                _ => unreachable!("pose blocks have 0, 5 or 6 parameters"),
            }
            if let Some(base) = layout.focal_base {
                columns.push((base + obs.group_slot, obs.focal));
            }

            for &(p, col) in &columns {
                g[p] += obs.weight * col.dot(&obs.residual);
                for &(q, colq) in &columns {
                    h[(p, q)] += obs.weight * col.dot(&colq);
                }
                if variable[t] {
                    let row: Vector3<f64> = obs.point.transpose() * col * obs.weight;
                    *w.entry(p).or_insert_with(Vector3::zeros) += row;
                }
            }
            if variable[t] {
                v += obs.point.transpose() * obs.point * obs.weight;
                gp += obs.point.transpose() * obs.residual * obs.weight;
            }
        }
        if variable[t] {
            blocks.push(PointBlock { track: t, v, g: gp, w: w.into_iter().collect() });
        }
    }

    let mut gradient_inf: f64 = g.amax();
    for block in &blocks {
        gradient_inf = gradient_inf.max(block.g.amax());
    }

    Ok(LinearSystem { h, g, blocks, gradient_inf, basis })
}

// ---------------------------------------------------------------------------
// One damped solve of the normal equations.

struct StepData {
    camera: DVector<f64>,
    points: Vec<(usize, Vector3<f64>)>,
    /// Model-predicted cost decrease, for the gain ratio.
    predicted: f64,
}

fn solve_damped(system: &LinearSystem, lambda: f64) -> Option<StepData> {
    let n = system.g.len();
    let mut reduced = system.h.clone();
    let mut rhs = system.g.clone();
    rhs.neg_mut();
    let mut cam_diag = DVector::zeros(n);
    for i in 0..n {
        let d = system.h[(i, i)].max(MIN_DIAG);
        cam_diag[i] = d;
        reduced[(i, i)] += lambda * d;
    }

    // Eliminate every point block into the camera system.
    let mut factors = Vec::with_capacity(system.blocks.len());
    for block in &system.blocks {
        let mut m = block.v;
        let mut d3 = Vector3::zeros();
        for k in 0..3 {
            let d = block.v[(k, k)].max(MIN_DIAG);
            d3[k] = d;
            m[(k, k)] += lambda * d;
        }
        let minv = m.try_inverse()?;
        let y = minv * block.g;
        for &(p, wp) in &block.w {
            rhs[p] += wp.dot(&y);
            let minv_wp = minv * wp;
            for &(q, wq) in &block.w {
                reduced[(p, q)] -= wq.dot(&minv_wp);
            }
        }
        factors.push((minv, d3));
    }

    let chol = reduced.cholesky()?;
    let delta_c = chol.solve(&rhs);
    if delta_c.iter().any(|value| !value.is_finite()) {
        return None;
    }

    let mut damped_norm = 0.0;
    for i in 0..n {
        damped_norm += lambda * cam_diag[i] * delta_c[i] * delta_c[i];
    }
    let mut descent = system.g.dot(&delta_c);
    let mut points = Vec::with_capacity(system.blocks.len());
    for (block, (minv, d3)) in system.blocks.iter().zip(&factors) {
        let mut coupled = Vector3::zeros();
        for &(p, wp) in &block.w {
            coupled += wp * delta_c[p];
        }
        let dp = minv * (-block.g - coupled);
        for k in 0..3 {
            damped_norm += lambda * d3[k] * dp[k] * dp[k];
        }
        descent += block.g.dot(&dp);
        points.push((block.track, dp));
    }

    Some(StepData {
        camera: delta_c,
        points,
        predicted: 0.5 * (damped_norm - descent),
    })
}

/// Retracts a step onto the state. `None` when the step leaves the valid
/// region (non-finite values or a non-positive focal), which the caller
/// treats like a rejected step.
fn apply_step(
    state: &State,
    layout: &Layout,
    basis: &Matrix3x2<f64>,
    step: &StepData,
) -> Option<State> {
    let mut next = state.clone();
    for slot in 0..layout.images.len() {
        let offset = layout.pose_offset[slot];
        match layout.pose_dof[slot] {
            0 => {}
            5 => {
                let delta = Vector3::new(
                    step.camera[offset],
                    step.camera[offset + 1],
                    step.camera[offset + 2],
                );
                next.rotations[slot] = Rotation::from_scaled_axis(delta).compose(&state.rotations[slot]);
                let u = Vector2::new(step.camera[offset + 3], step.camera[offset + 4]);
                next.centers[slot] += basis * u;
            }
            6 => {
                let delta = Vector3::new(
                    step.camera[offset],
                    step.camera[offset + 1],
                    step.camera[offset + 2],
                );
                next.rotations[slot] = Rotation::from_scaled_axis(delta).compose(&state.rotations[slot]);
                next.centers[slot] += Vector3::new(
                    step.camera[offset + 3],
                    step.camera[offset + 4],
                    step.camera[offset + 5],
                );
            }
            _ => unreachable!("pose blocks have 0, 5 or 6 parameters"),
        }
        if !next.centers[slot].iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    if let Some(base) = layout.focal_base {
        for slot in 0..layout.groups.len() {
            next.focals[slot] += step.camera[base + slot];
            if !(next.focals[slot].is_finite() && next.focals[slot] > 0.0) {
                return None;
            }
        }
    }
    for &(t, dp) in &step.points {
        if !dp.iter().all(|v| v.is_finite()) {
            return None;
        }
        next.points[t] += dp;
    }
    Some(next)
}
