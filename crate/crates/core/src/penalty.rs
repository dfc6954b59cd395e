//! Generalized Charbonnier penalty `(x^2 + eps^2)^a - eps^(2a)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustPenalty {
    /// Exponent `a` in `(0, 1]`. `a = 1` gives the quadratic `x^2`.
    pub exponent: f64,
    pub epsilon: f64,
}

impl Default for RobustPenalty {
    fn default() -> Self {
        Self::charbonnier()
    }
}

impl RobustPenalty {
    pub const fn new(exponent: f64, epsilon: f64) -> Self {
        Self { exponent, epsilon }
    }

    /// `a = 0.45, eps = 0.001`.
    pub const fn charbonnier() -> Self {
        Self::new(0.45, 0.001)
    }

    pub const fn quadratic() -> Self {
        Self::new(1.0, 0.001)
    }

    pub fn is_valid(&self) -> bool {
        self.exponent > 0.0 && self.exponent <= 1.0 && self.epsilon > 0.0
    }

    pub fn is_quadratic(&self) -> bool {
        self.exponent == 1.0
    }

    #[inline]
    pub fn rho(&self, x: f64) -> f64 {
        if self.is_quadratic() {
            return x * x;
        }
        let e2 = self.epsilon * self.epsilon;
        (x * x + e2).powf(self.exponent) - e2.powf(self.exponent)
    }

    /// Derivative of the penalty with respect to `x^2`, i.e. the IRLS weight
    /// of the quadratic majorizer `rho(x0) + w (x^2 - x0^2)`.
    #[inline]
    pub fn irls_weight(&self, x: f64) -> f64 {
        if self.is_quadratic() {
            return 1.0;
        }
        let e2 = self.epsilon * self.epsilon;
        self.exponent * (x * x + e2).powf(self.exponent - 1.0)
    }
}

/// Free-function form of [`RobustPenalty::rho`].
#[inline]
pub fn rho(x: f64, p: &RobustPenalty) -> f64 {
    p.rho(x)
}
