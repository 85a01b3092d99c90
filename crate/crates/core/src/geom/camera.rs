use nalgebra::{Vector2, Vector3};

use super::GeomError;

/// Guard band around the imaging plane: points with `|z|` below this are
/// treated as having no finite projection. Callers working at a very
/// different scene scale pass their own epsilon to [`PinholeCamera::project_eps`].
pub const PLANE_EPSILON: f64 = 1e-8;

/// Result of projecting a camera-frame point through a pinhole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Point in front of the camera.
    Valid(Vector2<f64>),
    /// Point behind the camera. The perspective formula still yields a pixel
    /// (mirrored through the principal point); augmented tracks keep these
    /// observations, so the coordinates are preserved.
    Behind(Vector2<f64>),
    /// `|z|` inside the imaging-plane guard band; no finite projection.
    NearPlane,
}

impl Projection {
    /// Pixel coordinates if any exist (point in front or behind).
    pub fn pixel(&self) -> Option<Vector2<f64>> {
        match self {
            Projection::Valid(p) | Projection::Behind(p) => Some(*p),
            Projection::NearPlane => None,
        }
    }

    /// Pixel coordinates only for points in front of the camera.
    pub fn valid_pixel(&self) -> Option<Vector2<f64>> {
        match self {
            Projection::Valid(p) => Some(*p),
            _ => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Projection::Valid(_))
    }
}

/// Pinhole intrinsics: a single focal length for both axes, a principal
/// point, and the raster size the camera images onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(focal: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeomError::BadFocal(focal));
        }
        Ok(PinholeCamera {
            focal,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera with the principal point at the raster center, `((w-1)/2, (h-1)/2)`
    /// in the integer-pixel-center convention used throughout.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        Self::new(
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn project(&self, x_cam: &Vector3<f64>) -> Projection {
        self.project_eps(x_cam, PLANE_EPSILON)
    }

    pub fn project_eps(&self, x_cam: &Vector3<f64>, plane_eps: f64) -> Projection {
        let z = x_cam.z;
        if z.abs() <= plane_eps {
            return Projection::NearPlane;
        }
        let p = Vector2::new(
            self.focal * x_cam.x / z + self.cx,
            self.focal * x_cam.y / z + self.cy,
        );
        if z > 0.0 {
            Projection::Valid(p)
        } else {
            Projection::Behind(p)
        }
    }

    /// Camera-frame point for a pixel and its depth (z-coordinate, not ray
    /// length): `depth * ((u - cx)/f, (v - cy)/f, 1)`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        self.normalized_ray(pixel) * depth
    }

    /// Direction through a pixel with unit z-component.
    pub fn normalized_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.focal,
            (pixel.y - self.cy) / self.focal,
            1.0,
        )
    }

    /// Whether a continuous pixel position lies inside the raster region
    /// where values (e.g. depth) can be sampled bilinearly.
    pub fn in_bounds(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= self.width as f64 - 1.0
            && p.y <= self.height as f64 - 1.0
    }
}
