use serde::{Deserialize, Serialize};

/// Huber threshold for 2-DoF pixel residuals, `sqrt(5.991)`.
pub const DEFAULT_HUBER_DELTA: f64 = 2.447651936039926;

/// Huber M-estimator applied to squared residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustKernel {
    delta: f64,
}

impl Default for RobustKernel {
    fn default() -> Self {
        Self { delta: DEFAULT_HUBER_DELTA }
    }
}

impl RobustKernel {
    pub fn new(delta: f64) -> Option<Self> {
        (delta > 0.0 && delta.is_finite()).then_some(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(rho(r2), rho'(r2))`; the derivative is the IRLS weight.
    pub fn evaluate(&self, r2: f64) -> (f64, f64) {
        huber_rho(r2, self.delta)
    }
}

/// Huber loss of a squared residual: `r2` inside `delta`, `delta (2|r| - delta)`
/// outside. The weight is `d rho / d r2`, so 1 in the quadratic branch and
/// `delta / |r|` in the linear one.
pub fn huber_rho(r2: f64, delta: f64) -> (f64, f64) {
    debug_assert!(r2 >= 0.0);
    let d2 = delta * delta;
    if r2 <= d2 {
        (r2, 1.0)
    } else {
        let r = r2.sqrt();
        (delta * (2.0 * r - delta), delta / r)
    }
}

/// Squared-loss fallback used when no kernel is configured.
pub(crate) fn rho(kernel: Option<&RobustKernel>, r2: f64) -> (f64, f64) {
    kernel.map_or((r2, 1.0), |k| k.evaluate(r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches() {
        assert_eq!(huber_rho(1.0, 2.0), (1.0, 1.0));
        let delta = 1.5;
        let (v, w) = huber_rho((2.0 * delta) * (2.0 * delta), delta);
        assert!((v - 3.0 * delta * delta).abs() < 1e-12);
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn continuous_and_c1_at_threshold() {
        let delta = 2.45;
        let below = huber_rho(delta * delta * (1.0 - 1e-12), delta);
        let above = huber_rho(delta * delta * (1.0 + 1e-12), delta);
        assert!((below.0 - above.0).abs() < 1e-9);
        assert!((below.1 - above.1).abs() < 1e-9);
        assert!(RobustKernel::new(0.0).is_none());
    }
}
