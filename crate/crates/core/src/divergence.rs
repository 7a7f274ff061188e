//! Chi-square f-divergence and the conjugates used by the dual objective.
//!
//! `f(x) = (x-1)^2 / 2`, `g = alpha f`, and `g_*(x) = alpha f_*(x / alpha)`.

use crate::error::{dim, invalid, Result};
use crate::mdp::OccupancyMeasure;

pub fn f_value(x: f64) -> f64 {
    0.5 * (x - 1.0) * (x - 1.0)
}

pub fn f_conjugate(x: f64) -> f64 {
    0.5 * (x + 1.0) * (x + 1.0) - 0.5
}

/// Regularization strength of the chi-square penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareSpec {
    alpha: f64,
}

impl ChiSquareSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return invalid(format!("alpha must be positive and finite, got {alpha}"));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn g_conjugate(&self, x: f64) -> f64 {
        let a = self.alpha;
        let t = x / a + 1.0;
        0.5 * a * t * t - 0.5 * a
    }

    pub fn g_conjugate_prime(&self, x: f64) -> f64 {
        x / self.alpha + 1.0
    }

    /// `min_x g_*(x) = -alpha/2`, attained at `x = -alpha`.
    pub fn g_conjugate_min(&self) -> f64 {
        -0.5 * self.alpha
    }

    /// `(x + alpha)_+^2 / (2 alpha)`.
    pub fn g_conjugate_plus(&self, x: f64) -> f64 {
        let t = (x + self.alpha).max(0.0);
        t * t / (2.0 * self.alpha)
    }

    /// Derivative of [`Self::g_conjugate_plus`], i.e. `g_*'(x)_+`.
    pub fn g_conjugate_plus_prime(&self, x: f64) -> f64 {
        (x / self.alpha + 1.0).max(0.0)
    }

    /// Definitional form `1{g_*'(x) >= 0} (g_*(x) - min g_*)`.
    pub fn g_conjugate_plus_indicator(&self, x: f64) -> f64 {
        if self.g_conjugate_prime(x) >= 0.0 {
            self.g_conjugate(x) - self.g_conjugate_min()
        } else {
            0.0
        }
    }

    /// `max - min` of `g_*` over `[-v_max, v_max + 1]`.
    pub fn g_conjugate_range(&self, v_max: f64) -> f64 {
        let (lo, hi) = (-v_max, v_max + 1.0);
        let max = self.g_conjugate(lo).max(self.g_conjugate(hi));
        let vertex = -self.alpha;
        let min = if vertex >= lo { self.g_conjugate(vertex) } else { self.g_conjugate(lo) };
        max - min
    }
}

/// `E_mu[f(d/mu)]` over the joint weights `p(g) d(s,a;g)`.
///
/// Returns `f64::INFINITY` when `d` has mass where `mu` has none.
pub fn f_divergence(d: &OccupancyMeasure, mu: &OccupancyMeasure, goal_dist: &[f64]) -> Result<f64> {
    if d.d.len() != mu.d.len() || d.n_goals != goal_dist.len() {
        return dim("occupancy measures and goal distribution disagree in shape");
    }
    let dj = d.joint(goal_dist);
    let mj = mu.joint(goal_dist);
    let mut total = 0.0;
    for (&x, &m) in dj.iter().zip(&mj) {
        if m == 0.0 {
            if x > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        total += m * f_value(x / m);
    }
    Ok(total)
}
