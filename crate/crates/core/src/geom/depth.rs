use super::GeomError;

/// Dense per-pixel depth raster.
///
/// A value of exactly `0.0` marks an invalid pixel (no depth available);
/// valid depths are strictly positive and finite. Values are kept in f64 in
/// memory; the on-disk interchange format stores them as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, GeomError> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(GeomError::RasterSizeMismatch {
                width,
                height,
                got: values.len(),
            });
        }
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(GeomError::InvalidDepthValue {
                    x: (idx % width as usize) as u32,
                    y: (idx / width as usize) as u32,
                    value: v,
                });
            }
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    /// All-invalid raster.
    pub fn empty(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Depth at an integer pixel; `None` when out of bounds or invalid.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let v = self.values[(y as usize) * (self.width as usize) + x as usize];
        (v > 0.0).then_some(v)
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.values[(y as usize) * (self.width as usize) + x as usize] = v;
    }

    /// Bilinear sample at a continuous position. Returns `None` if the
    /// position is outside the raster or any participating texel is invalid:
    /// interpolating across an invalid pixel would blend geometry with
    /// nothing, so the whole sample is rejected.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        // Zero-weight texels do not participate: a sample at an exact integer
        // position depends only on that pixel, even next to an invalid one.
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        let v00 = self.get(x0, y0)?;
        let v10 = self.get(x1, y0)?;
        let v01 = self.get(x0, y1)?;
        let v11 = self.get(x1, y1)?;
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bottom = v01 * (1.0 - fx) + v11 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// New raster with every valid depth divided by `divisor`; invalid
    /// pixels stay invalid.
    pub fn rescaled(&self, divisor: f64) -> Result<Self, GeomError> {
        if !(divisor.is_finite() && divisor > 0.0) {
            return Err(GeomError::BadScale(divisor));
        }
        let values = self
            .values
            .iter()
            .map(|&v| if v > 0.0 { v / divisor } else { 0.0 })
            .collect();
        Ok(DepthMap {
            width: self.width,
            height: self.height,
            values,
        })
    }

    /// Fraction of pixels carrying a valid depth.
    pub fn valid_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let valid = self.values.iter().filter(|&&v| v > 0.0).count();
        valid as f64 / self.values.len() as f64
    }
}
