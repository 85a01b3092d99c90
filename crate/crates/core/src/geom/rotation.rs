use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};

/// A 3-D rotation stored as a unit quaternion.
///
/// Composition renormalizes the product, so arbitrarily long chains keep the
/// quaternion unit-length to better than 1e-12. The geodesic distance between
/// two rotations is the rotation angle of `a * b^-1`, computed through
/// `atan2` so it stays accurate both near zero and near pi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q)
    }

    /// Builds from raw quaternion components in `(w, x, y, z)` order,
    /// normalizing. Panics on the zero quaternion.
    pub fn from_quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = Quaternion::new(w, x, y, z);
        assert!(q.norm() > 0.0, "cannot normalize a zero quaternion");
        Rotation(Unit::new_normalize(q))
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        assert!(axis.norm() > 0.0, "rotation axis must be non-zero");
        Rotation(UnitQuaternion::from_axis_angle(
            &Unit::new_normalize(*axis),
            angle,
        ))
    }

    /// Exponential map: `v` is an axis-angle vector (direction = axis,
    /// norm = angle in radians).
    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(v))
    }

    /// Logarithm map, inverse of [`Rotation::from_scaled_axis`]. The result
    /// has norm in `[0, pi]`.
    pub fn scaled_axis(&self) -> Vector3<f64> {
        // Flip to the w >= 0 hemisphere so the returned angle is minimal.
        let q = self.0.quaternion();
        let (w, im) = if q.w < 0.0 {
            (-q.w, -q.imag())
        } else {
            (q.w, q.imag())
        };
        let n = im.norm();
        if n < 1e-12 {
            // theta/n -> 2/w for small angles.
            im * (2.0 / w)
        } else {
            im * (2.0 * n.atan2(w) / n)
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation(UnitQuaternion::from_matrix(m))
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(Unit::new_normalize(
            self.0.into_inner() * other.0.into_inner(),
        ))
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// Geodesic distance: the rotation angle of `self * other^-1`.
    pub fn geodesic_to(&self, other: &Rotation) -> f64 {
        let q = self.0.into_inner() * other.0.inverse().into_inner();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}
