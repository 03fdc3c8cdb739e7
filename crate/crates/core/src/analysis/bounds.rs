use crate::error::{Error, Result};

/// Symbols shared by the error bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Update ratio in `(0, 1)`.
    pub u: f64,
    /// Largest learner error half-width.
    pub lambda: f64,
    pub k: usize,
    pub gamma: f64,
    /// Hop order.
    pub n: usize,
    /// `||c_pi||_2`
    pub cost_norm: f64,
}

impl BoundParams {
    pub fn variance(u: f64, lambda: f64) -> Self {
        Self {
            u,
            lambda,
            k: 2,
            gamma: 0.5,
            n: 2,
            cost_norm: 0.0,
        }
    }

    pub fn order_gap(gamma: f64, n: usize, cost_norm: f64) -> Self {
        Self {
            u: 0.5,
            lambda: 0.0,
            k: 2,
            gamma,
            n,
            cost_norm,
        }
    }
}

/// Limiting error variance with independent learner errors:
/// `(1 - u) / (1 + u) lambda^2`.
pub fn prop1_bound(p: &BoundParams) -> f64 {
    (1.0 - p.u) / (1.0 + p.u) * p.lambda * p.lambda
}

/// As [`prop1_bound`] without independence:
/// `2 lambda^2 / (1 + u)^2 + (1 - u) / (1 + u) lambda^2`.
pub fn cor2_bound(p: &BoundParams) -> f64 {
    let l2 = p.lambda * p.lambda;
    2.0 * l2 / ((1.0 + p.u) * (1.0 + p.u)) + prop1_bound(p)
}

/// Gap between the policy Q-functions of the original and `n`-hop models:
/// `gamma / (1 - gamma^n) (1 - gamma^(n-1)) / (1 - gamma) ||c_pi||_2`.
pub fn prop3_bound(p: &BoundParams) -> Result<f64> {
    if p.n <= 1 {
        return Err(Error::invalid("n", "the bound needs an order above 1"));
    }
    if !(p.gamma > 0.0 && p.gamma < 1.0) {
        return Err(Error::invalid("gamma", format!("{} is outside (0, 1)", p.gamma)));
    }
    let g = p.gamma;
    let n = p.n as i32;
    Ok(g / (1.0 - g.powi(n)) * (1.0 - g.powi(n - 1)) / (1.0 - g) * p.cost_norm)
}
