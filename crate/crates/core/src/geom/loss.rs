/// Robust losses evaluated on squared residual norms.
///
/// All three kinds take the *squared* residual `s = ||r||^2` and return the
/// loss value together with its derivative d(value)/d(s). In the quadratic
/// region the value is `s` itself (not `s/2`), so the trivial loss is exactly
/// the squared norm and the others reduce to it for small residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    /// `rho(s) = s`.
    Trivial,
    /// Quadratic up to `scale^2`, linear growth beyond: outliers keep a
    /// bounded slope instead of a quadratic pull.
    Huber { scale: f64 },
    /// `rho(s) = scale^2 * atan(s / scale^2)`: bounded total loss, so gross
    /// outliers lose almost all influence.
    Arctan { scale: f64 },
}

impl RobustLoss {
    pub fn huber(scale: f64) -> Self {
        assert!(scale.is_finite() && scale > 0.0, "huber scale must be positive");
        RobustLoss::Huber { scale }
    }

    pub fn arctan(scale: f64) -> Self {
        assert!(
            scale.is_finite() && scale > 0.0,
            "arctan scale must be positive"
        );
        RobustLoss::Arctan { scale }
    }

    /// Evaluates `(rho(s), rho'(s))` at a squared residual `s`.
    ///
    /// Panics if `s` is negative or not finite — a squared norm can never be
    /// either, so such an input is a caller bug.
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        assert!(
            s.is_finite() && s >= 0.0,
            "squared residual must be finite and non-negative, got {s}"
        );
        match *self {
            RobustLoss::Trivial => (s, 1.0),
            RobustLoss::Huber { scale } => {
                let k2 = scale * scale;
                if s <= k2 {
                    (s, 1.0)
                } else {
                    let r = s.sqrt();
                    (2.0 * scale * r - k2, scale / r)
                }
            }
            RobustLoss::Arctan { scale } => {
                let k2 = scale * scale;
                let ratio = s / k2;
                (k2 * ratio.atan(), 1.0 / (1.0 + ratio * ratio))
            }
        }
    }
}
