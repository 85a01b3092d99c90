//! The reprojection residual and its analytic derivatives.

use nalgebra::{Matrix2x3, Vector2, Vector3};

use crate::geom::{so3, Rotation, PLANE_EPSILON};

/// Residual of one observation and its Jacobians with respect to every
/// parameter kind that can vary during refinement.
///
/// The camera model is `pix = f * (x/z, y/z) + (cx, cy)` applied to
/// `x_cam = R * (X - c)`; the residual is `pix - measured`. The rotation
/// Jacobian is taken in the left tangent (`R <- Exp(delta) * R`). The
/// perspective division is evaluated on either side of the camera, so
/// behind-camera observations differentiate exactly like front-side ones.
#[derive(Debug, Clone)]
pub(crate) struct ResidualBlock {
    pub residual: Vector2<f64>,
    pub wrt_rotation: Matrix2x3<f64>,
    pub wrt_center: Matrix2x3<f64>,
    pub wrt_focal: Vector2<f64>,
    pub wrt_point: Matrix2x3<f64>,
}

/// Evaluates one observation. Returns `None` when the point grazes the
/// imaging plane (`|z| <= PLANE_EPSILON`), in which case the observation
/// contributes nothing this evaluation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn reprojection_residual(
    rotation: &Rotation,
    center: &Vector3<f64>,
    focal: f64,
    cx: f64,
    cy: f64,
    point: &Vector3<f64>,
    measured: &Vector2<f64>,
) -> Option<ResidualBlock> {
    let x_cam = rotation.apply(&(point - center));
    let z = x_cam.z;
    if z.abs() <= PLANE_EPSILON {
        return None;
    }
    let (nx, ny) = (x_cam.x / z, x_cam.y / z);
    let residual = Vector2::new(focal * nx + cx - measured.x, focal * ny + cy - measured.y);

    let d_pix = Matrix2x3::new(
        focal / z,
        0.0,
        -focal * nx / z,
        0.0,
        focal / z,
        -focal * ny / z,
    );
    let wrt_point = d_pix * rotation.matrix();
    let block = ResidualBlock {
        residual,
        wrt_rotation: -d_pix * so3::hat(&x_cam),
        wrt_center: -wrt_point,
        wrt_focal: Vector2::new(nx, ny),
        wrt_point,
    };
    Some(block)
}
