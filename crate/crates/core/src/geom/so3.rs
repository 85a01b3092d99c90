//! Tangent-space helpers for SO(3) used by the averaging and bundle
//! adjustment solvers.

use nalgebra::{Matrix3, Vector3};

/// Skew-symmetric cross-product matrix: `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the left Jacobian of the exponential map at `phi`.
///
/// This is the exact derivative of `log(exp(a) * exp(phi))` with respect to
/// `a` at `a = 0`, which the rotation-averaging solver needs for its
/// Gauss-Newton steps. Falls back to the Taylor expansion near the identity.
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let px = hat(phi);
    let coeff = if theta2 < 1e-12 {
        // 1/theta^2 - (1 + cos)/(2 theta sin) = 1/12 + theta^2/720 + ...
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * px + coeff * (px * px)
}
