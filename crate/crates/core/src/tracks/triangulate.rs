//! Multi-view point triangulation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geom::{PinholeCamera, Pose, PLANE_EPSILON};
use crate::ids::ImageId;

use super::Track;

/// Minimum parallax angle between any two viewing rays for a track to be
/// considered triangulable.
pub const MIN_PARALLAX: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum TriangulateError {
    #[error("triangulation needs at least two posed observations, got {0}")]
    TooFewViews(usize),
    #[error("degenerate baseline: maximum parallax {0:.3e} rad")]
    DegenerateBaseline(f64),
    #[error("triangulation system has no finite solution")]
    Singular,
}

struct View {
    pose: Pose,
    camera: PinholeCamera,
    pixel: Vector2<f64>,
}

/// Linear (algebraic) triangulation: each view contributes the two
/// homogeneous constraints that its normalized ray passes through the
/// point; the point is the null direction of the stacked system.
fn linear_point(views: &[View]) -> Result<Vector3<f64>, TriangulateError> {
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (k, view) in views.iter().enumerate() {
        let r = view.pose.rotation.matrix();
        let t = view.pose.translation;
        let nx = (view.pixel.x - view.camera.cx) / view.camera.focal;
        let ny = (view.pixel.y - view.camera.cy) / view.camera.focal;
        for col in 0..3 {
            a[(2 * k, col)] = nx * r[(2, col)] - r[(0, col)];
            a[(2 * k + 1, col)] = ny * r[(2, col)] - r[(1, col)];
        }
        a[(2 * k, 3)] = nx * t.z - t.x;
        a[(2 * k + 1, 3)] = ny * t.z - t.y;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    // Singular values come back sorted descending; the null direction is
    // the last row.
    let h = v_t.row(v_t.nrows() - 1);
    let xyz = Vector3::new(h[0], h[1], h[2]);
    let w = h[3];
    if w.abs() <= 1e-12 * xyz.norm() {
        return Err(TriangulateError::Singular);
    }
    Ok(xyz / w)
}

/// Squared-pixel reprojection cost of `point` over the views, skipping
/// plane-grazing projections.
fn reprojection_cost(views: &[View], point: &Vector3<f64>) -> f64 {
    let mut cost = 0.0;
    for view in views {
        let x_cam = view.pose.transform(point);
        if x_cam.z.abs() <= PLANE_EPSILON {
            continue;
        }
        let proj = Vector2::new(
            view.camera.focal * x_cam.x / x_cam.z + view.camera.cx,
            view.camera.focal * x_cam.y / x_cam.z + view.camera.cy,
        );
        cost += (proj - view.pixel).norm_squared();
    }
    cost
}

/// One Gauss-Newton step on the reprojection cost, accepted only if it
/// improves on the linear estimate.
fn polish(views: &[View], point: Vector3<f64>) -> Vector3<f64> {
    let mut h = Matrix3::zeros();
    let mut g = Vector3::zeros();
    for view in views {
        let x_cam = view.pose.transform(&point);
        let z = x_cam.z;
        if z.abs() <= PLANE_EPSILON {
            continue;
        }
        let f = view.camera.focal;
        let proj = Vector2::new(f * x_cam.x / z + view.camera.cx, f * x_cam.y / z + view.camera.cy);
        let r = proj - view.pixel;
        let d_pix = nalgebra::Matrix2x3::new(
            f / z,
            0.0,
            -f * x_cam.x / (z * z),
            0.0,
            f / z,
            -f * x_cam.y / (z * z),
        );
        let j = d_pix * view.pose.rotation.matrix();
        h += j.transpose() * j;
        g += j.transpose() * r;
    }
    let Some(chol) = h.cholesky() else { return point };
    let candidate = point + chol.solve(&-g);
    if reprojection_cost(views, &candidate) < reprojection_cost(views, &point) {
        candidate
    } else {
        point
    }
}

/// Triangulates a track's 3D point from its observations in the posed
/// images.
///
/// Observations in images missing a pose or a camera are ignored. The
/// linear estimate minimizes algebraic error over all remaining views; a
/// single Gauss-Newton step then polishes it in pixel space. Cheirality is
/// not enforced — callers that require points in front of their cameras
/// must filter afterwards.
pub fn triangulate(
    track: &Track,
    poses: &BTreeMap<ImageId, Pose>,
    cameras: &BTreeMap<ImageId, PinholeCamera>,
) -> Result<Vector3<f64>, TriangulateError> {
    let views: Vec<View> = track
        .observations
        .iter()
        .filter_map(|obs| {
            let pose = *poses.get(&obs.image)?;
            let camera = *cameras.get(&obs.image)?;
            Some(View { pose, camera, pixel: obs.pixel })
        })
        .collect();
    if views.len() < 2 {
        return Err(TriangulateError::TooFewViews(views.len()));
    }

    let point = linear_point(&views)?;

    // The baseline check needs the point: what matters is the angle
    // actually subtended, not the distance between camera centers.
    let mut max_parallax = 0.0f64;
    for a in 0..views.len() {
        for b in (a + 1)..views.len() {
            let ra = point - views[a].pose.center();
            let rb = point - views[b].pose.center();
            if ra.norm() < 1e-12 || rb.norm() < 1e-12 {
                continue;
            }
            let angle = ra.cross(&rb).norm().atan2(ra.dot(&rb));
            max_parallax = max_parallax.max(angle);
        }
    }
    if max_parallax < MIN_PARALLAX {
        return Err(TriangulateError::DegenerateBaseline(max_parallax));
    }

    Ok(polish(&views, point))
}
