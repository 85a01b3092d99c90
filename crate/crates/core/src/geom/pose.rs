use nalgebra::Vector3;

use super::Rotation;

/// Rigid camera pose in camera-from-world convention:
///
/// ```text
/// x_cam = R * x_world + t
/// ```
///
/// The camera center in world coordinates is `c = -R^T t`. All relative
/// poses in the pipeline are derived from pairs of these.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// Builds the pose whose camera center (in world coordinates) is `c`.
    pub fn from_rotation_center(rotation: Rotation, center: Vector3<f64>) -> Self {
        let translation = -rotation.apply(&center);
        Pose {
            rotation,
            translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.inverse().apply(&self.translation)
    }

    /// World point into camera coordinates.
    pub fn transform(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(x_world) + self.translation
    }

    /// Camera point back into world coordinates.
    pub fn inverse_transform(&self, x_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse().apply(&(x_cam - self.translation))
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -inv_rot.apply(&self.translation),
        }
    }
}

/// Relative pose mapping `from`-camera coordinates into `to`-camera
/// coordinates: `relative_pose(i, j).compose(&p_i) == p_j`.
pub fn relative_pose(from: &Pose, to: &Pose) -> Pose {
    to.compose(&from.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_pose(k: u32) -> Pose {
        let k = k as f64;
        Pose::new(
            Rotation::from_axis_angle(&Vector3::new(0.3 + k, -1.0, 0.5 * k + 0.2), 0.7 + 0.3 * k),
            Vector3::new(1.0 - k, 2.0 * k, -0.5),
        )
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        for k in 0..5 {
            let p = sample_pose(k);
            let id = p.compose(&p.inverse());
            assert!(id.rotation.angle() < 1e-10);
            assert!(id.translation.norm() < 1e-10);
        }
    }

    #[test]
    fn relative_pose_closes_the_loop() {
        let a = sample_pose(1);
        let b = sample_pose(3);
        let rel = relative_pose(&a, &b);
        let b2 = rel.compose(&a);
        assert!(b2.rotation.geodesic_to(&b.rotation) < 1e-10);
        assert!((b2.translation - b.translation).norm() < 1e-10);
    }

    #[test]
    fn center_round_trip() {
        let c = Vector3::new(1.5, -2.0, 0.25);
        let p = Pose::from_rotation_center(
            Rotation::from_axis_angle(&Vector3::new(1.0, 0.2, -0.4), 1.1),
            c,
        );
        assert!((p.center() - c).norm() < 1e-12);
        // The center maps to the camera origin.
        assert!(p.transform(&c).norm() < 1e-12);
    }

    #[test]
    fn transform_and_inverse_transform_round_trip() {
        let p = sample_pose(2);
        let x = Vector3::new(0.4, -1.7, 3.0);
        let back = p.inverse_transform(&p.transform(&x));
        assert!((back - x).norm() < 1e-10);
    }

    #[test]
    fn relative_translation_encodes_center_difference() {
        // t_ij should equal R_j * (c_i - c_j).
        let a = sample_pose(0);
        let b = sample_pose(4);
        let rel = relative_pose(&a, &b);
        let expected = b.rotation.apply(&(a.center() - b.center()));
        assert!((rel.translation - expected).norm() < 1e-10);
    }
}
