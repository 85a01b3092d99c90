//! Ground-truth scenes: camera trajectories around piecewise-planar
//! geometry, with exact ray-cast depth.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;

use crate::geom::{relative_pose, DepthMap, PinholeCamera, Pose, Rotation};
use crate::ids::ImageId;
use crate::rng::{derive_rng, StreamDomain};

use super::SynthError;

/// Spacing of synthetic surface features in scene units.
const FEATURE_SPACING: f64 = 0.25;
/// A ray hit closer than this along the ray is treated as grazing the
/// camera itself and ignored.
const RAY_MIN_T: f64 = 1e-9;
/// Tolerance when checking that a surface point is the first thing a ray
/// hits (occlusion test).
const VISIBILITY_TOL: f64 = 1e-6;

/// Camera layout of a generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    /// Cameras on a ring looking outward at a surrounding wall; dense
    /// neighbor visibility with one large cycle.
    Loop,
    /// Cameras strafing along a straight wall; visibility decays linearly
    /// with index distance, so the view graph is path-like with a large
    /// radius.
    Corridor,
    /// Cameras bunched together looking at the same wall; near-complete
    /// visibility, minimal radius.
    Cluster,
    /// Two geometrically disjoint camera groups whose walls sit at
    /// different depths, with designated look-alike pairs across them.
    /// With `bridge`, a chain of cameras over an intermediate wall patch
    /// genuinely connects the rooms.
    TwoRooms { bridge: bool },
}

/// Which part of a scene a camera belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoomLabel {
    /// Single-group trajectories.
    Main,
    RoomA,
    RoomB,
    Bridge,
}

/// Parameters of scene generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub trajectory: Trajectory,
    /// Number of cameras. For [`Trajectory::TwoRooms`] this is split 4:3
    /// between the rooms; bridge cameras, when enabled, come on top.
    pub cameras: u32,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Retrieval window: candidate pairs are limited to index distance at
    /// most this (cyclic for loops). Zero means all pairs. Two-room scenes
    /// always score all pairs.
    pub candidate_window: u32,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(trajectory: Trajectory, cameras: u32, seed: u64) -> Self {
        SceneConfig {
            trajectory,
            cameras,
            width: 64,
            height: 48,
            focal: 60.0,
            candidate_window: 4,
            seed,
        }
    }
}

/// A one-sided-textured, two-sided-intersectable rectangle in space:
/// `origin + a*edge_u + b*edge_v` for `a, b` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
}

impl Rect {
    pub fn new(origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>) -> Self {
        Rect { origin, edge_u, edge_v }
    }

    /// Ray parameter of the intersection with `origin + t*dir`, if the ray
    /// hits the rectangle at `t > RAY_MIN_T`.
    fn intersect(&self, ray_origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let normal = self.edge_u.cross(&self.edge_v);
        let denom = dir.dot(&normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.origin - ray_origin).dot(&normal) / denom;
        if t <= RAY_MIN_T {
            return None;
        }
        let p = ray_origin + dir * t - self.origin;
        // Decompose p = a*edge_u + b*edge_v. The edges need not be
        // orthogonal, so this is the 2x2 Gram system, not two projections.
        let guu = self.edge_u.norm_squared();
        let gvv = self.edge_v.norm_squared();
        let guv = self.edge_u.dot(&self.edge_v);
        let det = guu * gvv - guv * guv;
        if det.abs() < 1e-18 {
            return None;
        }
        let pu = p.dot(&self.edge_u);
        let pv = p.dot(&self.edge_v);
        let a = (pu * gvv - pv * guv) / det;
        let b = (pv * guu - pu * guv) / det;
        let inside = (-1e-12..=1.0 + 1e-12).contains(&a) && (-1e-12..=1.0 + 1e-12).contains(&b);
        inside.then_some(t)
    }

    pub fn point_at(&self, a: f64, b: f64) -> Vector3<f64> {
        self.origin + self.edge_u * a + self.edge_v * b
    }

    fn corners(&self) -> [Vector3<f64>; 4] {
        [
            self.point_at(0.0, 0.0),
            self.point_at(1.0, 0.0),
            self.point_at(0.0, 1.0),
            self.point_at(1.0, 1.0),
        ]
    }
}

/// A fully-specified ground-truth scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    config: SceneConfig,
    poses: Vec<Pose>,
    rects: Vec<Rect>,
    feature_points: Vec<Vector3<f64>>,
    doppelganger_pairs: std::collections::BTreeSet<(ImageId, ImageId)>,
    rooms: Vec<RoomLabel>,
}

/// Camera pose at `eye` looking along `forward` with `up` fixing the roll.
/// Camera axes: x right, y down, z forward.
fn look_at(eye: Vector3<f64>, forward: Vector3<f64>, up: Vector3<f64>) -> Pose {
    let z = forward.normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::from_rotation_center(Rotation::from_matrix(&r), eye)
}

fn wall_z_span() -> (f64, Vector3<f64>) {
    (-3.0, Vector3::new(0.0, 0.0, 6.0))
}

/// Axis-aligned wall segment along x at depth `y`, spanning `[x0, x1]`.
fn wall_x(x0: f64, x1: f64, y: f64) -> Rect {
    let (z0, v) = wall_z_span();
    Rect::new(Vector3::new(x0, y, z0), Vector3::new(x1 - x0, 0.0, 0.0), v)
}

struct Layout {
    poses: Vec<Pose>,
    rects: Vec<Rect>,
    doppelganger_pairs: Vec<(u32, u32)>,
    rooms: Vec<RoomLabel>,
}

fn layout_loop(n: u32) -> Layout {
    // A tight ring far from the wall keeps the angular footprints of
    // neighboring cameras overlapping well past the strongest graph
    // threshold even at 50 cameras.
    let ring_radius = 1.8;
    let wall_radius = 10.0;
    let segments = 24;
    let up = Vector3::z();
    let poses = (0..n)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            let radial = Vector3::new(theta.cos(), theta.sin(), 0.0);
            look_at(radial * ring_radius, radial, up)
        })
        .collect();
    // The wall is taller than the side walls elsewhere: cameras sit ~8
    // units away, so the vertical field of view is wider.
    let (z0, v) = (-4.0, Vector3::new(0.0, 0.0, 8.0));
    let rects = (0..segments)
        .map(|k| {
            let p0 = std::f64::consts::TAU * k as f64 / segments as f64;
            let p1 = std::f64::consts::TAU * (k + 1) as f64 / segments as f64;
            let c0 = Vector3::new(wall_radius * p0.cos(), wall_radius * p0.sin(), z0);
            let c1 = Vector3::new(wall_radius * p1.cos(), wall_radius * p1.sin(), z0);
            Rect::new(c0, c1 - c0, v)
        })
        .collect();
    Layout {
        poses,
        rects,
        doppelganger_pairs: Vec::new(),
        rooms: vec![RoomLabel::Main; n as usize],
    }
}

fn layout_corridor(n: u32) -> Layout {
    let step = 0.11;
    let wall_depth = 4.0;
    let margin = 2.3;
    let up = Vector3::z();
    let forward = Vector3::y();
    let poses = (0..n)
        .map(|k| look_at(Vector3::new(k as f64 * step, 0.0, 0.0), forward, up))
        .collect();
    let span = (n - 1) as f64 * step;
    Layout {
        poses,
        rects: vec![wall_x(-margin, span + margin, wall_depth)],
        doppelganger_pairs: Vec::new(),
        rooms: vec![RoomLabel::Main; n as usize],
    }
}

fn layout_cluster(n: u32, rng: &mut impl Rng) -> Layout {
    let up = Vector3::z();
    let forward = Vector3::y();
    let poses = (0..n)
        .map(|_| {
            let jitter = Vector3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            );
            look_at(jitter, forward, up)
        })
        .collect();
    Layout {
        poses,
        rects: vec![wall_x(-4.0, 4.0, 4.0)],
        doppelganger_pairs: Vec::new(),
        rooms: vec![RoomLabel::Main; n as usize],
    }
}

/// Room A watches a wall at depth 3, room B a wall at depth 4.5; their
/// footprints are laterally disjoint and neither room's cameras can see the
/// other's wall. Look-alike pairs link each A camera to a B camera. With
/// `bridge`, an intermediate wall patch at depth 3.75 plus a chain of
/// cameras over it connects the rooms for real.
fn layout_two_rooms(n: u32, bridge: bool) -> Layout {
    let step = 0.5;
    let gap = 9.5;
    let room_a = (4 * n / 7).max(2);
    let room_b = n - room_a;
    let span_a = (room_a - 1) as f64 * step;
    let span_b = (room_b - 1) as f64 * step;
    let b_start = span_a + gap;
    let up = Vector3::z();
    let forward = Vector3::y();
    let cam = |x: f64| look_at(Vector3::new(x, 0.0, 0.0), forward, up);

    let mut poses = Vec::new();
    let mut rooms = Vec::new();
    for k in 0..room_a {
        poses.push(cam(k as f64 * step));
        rooms.push(RoomLabel::RoomA);
    }
    for k in 0..room_b {
        poses.push(cam(b_start + k as f64 * step));
        rooms.push(RoomLabel::RoomB);
    }

    let mut rects = vec![
        wall_x(-2.0, span_a + 2.0, 3.0),
        wall_x(b_start - 2.4, b_start + span_b + 2.4, 4.5),
    ];
    if bridge {
        rects.push(wall_x(span_a + 1.0, b_start - 1.0, 3.75));
        let steps = (gap / step).round() as u32;
        for k in 1..steps {
            poses.push(cam(span_a + k as f64 * step));
            rooms.push(RoomLabel::Bridge);
        }
    }

    let doppelganger_pairs = (0..room_a)
        .map(|i| (i, room_a + (i % room_b)))
        .collect();
    Layout { poses, rects, doppelganger_pairs, rooms }
}

/// Builds a scene for the given configuration. Deterministic: the same
/// configuration always yields the same scene, bit for bit.
pub fn generate_scene(config: SceneConfig) -> Result<SyntheticScene, SynthError> {
    let min_cameras = match config.trajectory {
        Trajectory::TwoRooms { .. } => 4,
        _ => 2,
    };
    if config.cameras < min_cameras {
        return Err(SynthError::TooFewCameras { needed: min_cameras, got: config.cameras });
    }
    if config.width < 8 || config.height < 8 {
        return Err(SynthError::BadImageSize { width: config.width, height: config.height });
    }
    if !(config.focal.is_finite() && config.focal > 0.0) {
        return Err(SynthError::BadFocal(config.focal));
    }

    let mut rng = derive_rng(config.seed, StreamDomain::Scene, 0);
    let layout = match config.trajectory {
        Trajectory::Loop => layout_loop(config.cameras),
        Trajectory::Corridor => layout_corridor(config.cameras),
        Trajectory::Cluster => layout_cluster(config.cameras, &mut rng),
        Trajectory::TwoRooms { bridge } => layout_two_rooms(config.cameras, bridge),
    };

    let feature_points = scatter_features(&layout.rects, &mut rng);
    let scene = SyntheticScene {
        config,
        poses: layout.poses,
        rects: layout.rects,
        feature_points,
        doppelganger_pairs: layout
            .doppelganger_pairs
            .into_iter()
            .map(|(i, j)| (ImageId(i.min(j)), ImageId(i.max(j))))
            .collect(),
        rooms: layout.rooms,
    };

    for id in scene.images() {
        let fraction = scene.coverage_fraction(id, 2);
        if fraction < 0.3 {
            return Err(SynthError::InsufficientCoverage { image: id.0, fraction });
        }
    }
    Ok(scene)
}

/// Evenly scatters surface features over each rectangle, with a small
/// deterministic jitter so they do not form exact image-space lattices.
fn scatter_features(rects: &[Rect], rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let mut points = Vec::new();
    for rect in rects {
        let nu = (rect.edge_u.norm() / FEATURE_SPACING).round().max(1.0) as u32;
        let nv = (rect.edge_v.norm() / FEATURE_SPACING).round().max(1.0) as u32;
        for ku in 0..nu {
            for kv in 0..nv {
                let ja: f64 = rng.gen_range(-0.2..0.2);
                let jb: f64 = rng.gen_range(-0.2..0.2);
                let a = (ku as f64 + 0.5 + ja) / nu as f64;
                let b = (kv as f64 + 0.5 + jb) / nv as f64;
                points.push(rect.point_at(a, b));
            }
        }
    }
    points
}

impl SyntheticScene {
    /// Assembles a scene directly from poses and geometry, bypassing the
    /// trajectory layouts. Coverage is not validated — tests use this for
    /// degenerate setups (e.g. cameras that see nothing).
    pub fn custom(
        config: SceneConfig,
        poses: Vec<Pose>,
        rects: Vec<Rect>,
    ) -> Result<SyntheticScene, SynthError> {
        if poses.len() < 2 {
            return Err(SynthError::TooFewCameras { needed: 2, got: poses.len() as u32 });
        }
        if !(config.focal.is_finite() && config.focal > 0.0) {
            return Err(SynthError::BadFocal(config.focal));
        }
        let rooms = vec![RoomLabel::Main; poses.len()];
        let mut rng = derive_rng(config.seed, StreamDomain::Scene, 0);
        let feature_points = scatter_features(&rects, &mut rng);
        Ok(SyntheticScene {
            config,
            poses,
            rects,
            feature_points,
            doppelganger_pairs: Default::default(),
            rooms,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn camera_count(&self) -> u32 {
        self.poses.len() as u32
    }

    pub fn images(&self) -> impl Iterator<Item = ImageId> {
        (0..self.poses.len() as u32).map(ImageId)
    }

    /// Ground-truth pose of an image. Panics on an unknown id.
    pub fn pose(&self, id: ImageId) -> &Pose {
        &self.poses[id.0 as usize]
    }

    /// Intrinsics shared by every image (one physical camera).
    pub fn camera(&self) -> PinholeCamera {
        PinholeCamera::centered(self.config.focal, self.config.width, self.config.height)
            .expect("config validated at construction")
    }

    pub fn focal(&self) -> f64 {
        self.config.focal
    }

    /// Ground-truth relative pose mapping camera `i` coordinates to camera
    /// `j` coordinates.
    pub fn true_relative(&self, i: ImageId, j: ImageId) -> Pose {
        relative_pose(self.pose(i), self.pose(j))
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn feature_points(&self) -> &[Vector3<f64>] {
        &self.feature_points
    }

    pub fn room(&self, id: ImageId) -> RoomLabel {
        self.rooms[id.0 as usize]
    }

    pub fn is_doppelganger(&self, i: ImageId, j: ImageId) -> bool {
        let key = (i.min(j), i.max(j));
        self.doppelganger_pairs.contains(&key)
    }

    pub fn doppelganger_pairs(&self) -> impl Iterator<Item = (ImageId, ImageId)> + '_ {
        self.doppelganger_pairs.iter().copied()
    }

    /// First surface hit along `origin + t*dir`, as the ray parameter.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.rects
            .iter()
            .filter_map(|r| r.intersect(origin, dir))
            .min_by(f64::total_cmp)
    }

    /// Exact depth map of an image: per-pixel ray/plane intersection. The
    /// ray direction has unit length along the camera's viewing axis, so
    /// the ray parameter is the depth directly.
    pub fn render_depth(&self, id: ImageId) -> DepthMap {
        let camera = self.camera();
        let pose = self.pose(id);
        let center = pose.center();
        let rot_t = pose.rotation.inverse();
        let mut values = vec![0.0; (self.config.width * self.config.height) as usize];
        for y in 0..self.config.height {
            for x in 0..self.config.width {
                let ray_cam = camera.normalized_ray(&Vector2::new(x as f64, y as f64));
                let ray_world = rot_t.apply(&ray_cam);
                if let Some(t) = self.raycast(&center, &ray_world) {
                    values[(y * self.config.width + x) as usize] = t;
                }
            }
        }
        DepthMap::new(self.config.width, self.config.height, values)
            .expect("ray parameters are positive and finite")
    }

    /// Fraction of pixels (sampled with the given stride) that hit any
    /// surface.
    pub fn coverage_fraction(&self, id: ImageId, stride: u32) -> f64 {
        let camera = self.camera();
        let pose = self.pose(id);
        let center = pose.center();
        let rot_t = pose.rotation.inverse();
        let mut hit = 0usize;
        let mut total = 0usize;
        for y in (0..self.config.height).step_by(stride.max(1) as usize) {
            for x in (0..self.config.width).step_by(stride.max(1) as usize) {
                let ray_cam = camera.normalized_ray(&Vector2::new(x as f64, y as f64));
                let ray_world = rot_t.apply(&ray_cam);
                total += 1;
                if self.raycast(&center, &ray_world).is_some() {
                    hit += 1;
                }
            }
        }
        hit as f64 / total.max(1) as f64
    }

    /// Projects a surface point into an image, returning its pixel only
    /// when it lands in front of the camera, inside the bounds, and is not
    /// occluded by nearer geometry.
    pub fn project_visible(&self, point: &Vector3<f64>, id: ImageId) -> Option<Vector2<f64>> {
        let pose = self.pose(id);
        let x_cam = pose.transform(point);
        let pixel = self.camera().project(&x_cam).valid_pixel()?;
        if !self.camera().in_bounds(&pixel) {
            return None;
        }
        // The point sits on a surface, so a ray aimed at it must hit that
        // surface first: the smallest hit parameter should be 1.
        let dir = point - pose.center();
        let t = self.raycast(&pose.center(), &dir)?;
        ((t - 1.0).abs() <= VISIBILITY_TOL).then_some(pixel)
    }

    /// Largest extent of the scene: the diameter of the set of camera
    /// centers and surface corners.
    pub fn diameter(&self) -> f64 {
        let mut points: Vec<Vector3<f64>> = self.poses.iter().map(Pose::center).collect();
        for rect in &self.rects {
            points.extend(rect.corners());
        }
        let mut best = 0.0f64;
        for a in 0..points.len() {
            for b in (a + 1)..points.len() {
                best = best.max((points[a] - points[b]).norm());
            }
        }
        best
    }
}
