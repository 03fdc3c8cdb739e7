use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blend ratio `u_t` between the previous iterate and the weighted learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UpdateRatio {
    /// `u_t = u`
    Constant { u: f64 },
    /// `u_t = 1 - exp(-t / c4)`
    Exponential { c4: f64 },
    /// `u_t = 1 - 1 / (1 + t / c4)`
    Hyperbolic { c4: f64 },
    /// `u_t = 1 - c4^t`, `c4` in (0, 1)
    Geometric { c4: f64 },
}

impl UpdateRatio {
    pub fn at(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            UpdateRatio::Constant { u } => u,
            UpdateRatio::Exponential { c4 } => 1.0 - (-t / c4).exp(),
            UpdateRatio::Hyperbolic { c4 } => 1.0 - 1.0 / (1.0 + t / c4),
            UpdateRatio::Geometric { c4 } => 1.0 - c4.powf(t),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            UpdateRatio::Constant { u } => (0.0..=1.0).contains(&u),
            UpdateRatio::Exponential { c4 } | UpdateRatio::Hyperbolic { c4 } => c4 > 0.0 && c4.is_finite(),
            UpdateRatio::Geometric { c4 } => c4 > 0.0 && c4 < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("update_ratio", format!("{self:?} is outside its valid range")))
        }
    }
}

/// Learning-rate, exploration and update-ratio schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSet {
    /// `alpha_t = 1 / (1 + t / c1)`
    pub alpha_c1: f64,
    /// Per-learner `c2` in `epsilon_t = max(c2^t, c3)`.
    pub epsilon_decay: Vec<f64>,
    /// `c3`
    pub epsilon_floor: f64,
    pub update: UpdateRatio,
}

impl ScheduleSet {
    /// Decay constants used for the four-environment ensemble: the original
    /// environment decays fastest, the farthest order slowest.
    pub fn default_epsilon_decay(k: usize) -> Vec<f64> {
        (0..k)
            .map(|n| match n {
                0 => 0.95,
                n if n + 1 == k => 0.99,
                _ => 0.97,
            })
            .collect()
    }

    pub fn new(alpha_c1: f64, k: usize, epsilon_floor: f64, update: UpdateRatio) -> Self {
        Self {
            alpha_c1,
            epsilon_decay: Self::default_epsilon_decay(k),
            epsilon_floor,
            update,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.alpha_c1 > 0.0 && self.alpha_c1.is_finite()) {
            return Err(Error::invalid("alpha_c1", "must be positive"));
        }
        if self.epsilon_decay.len() != k {
            return Err(Error::invalid(
                "epsilon_decay",
                format!("{} constants given for {k} learners", self.epsilon_decay.len()),
            ));
        }
        if self.epsilon_decay.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return Err(Error::invalid("epsilon_decay", "constants must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor) {
            return Err(Error::invalid("epsilon_floor", "must lie in [0, 1]"));
        }
        self.update.validate()
    }

    pub fn alpha(&self, t: u64) -> f64 {
        1.0 / (1.0 + t as f64 / self.alpha_c1)
    }

    pub fn epsilon(&self, learner: usize, t: u64) -> f64 {
        self.epsilon_decay[learner].powf(t as f64).max(self.epsilon_floor)
    }

    pub fn update_ratio(&self, t: u64) -> f64 {
        self.update.at(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponential_ratio_starts_at_zero() {
        assert_eq!(UpdateRatio::Exponential { c4: 100.0 }.at(0), 0.0);
        assert_eq!(UpdateRatio::Hyperbolic { c4: 100.0 }.at(0), 0.0);
        assert_eq!(UpdateRatio::Geometric { c4: 0.9 }.at(0), 0.0);
        assert_eq!(UpdateRatio::Constant { u: 0.5 }.at(1234), 0.5);
    }

    #[test]
    fn schedule_values() {
        let s = ScheduleSet::new(100.0, 4, 0.01, UpdateRatio::Exponential { c4: 1000.0 });
        assert_eq!(s.epsilon_decay, vec![0.95, 0.97, 0.97, 0.99]);
        assert_eq!(s.alpha(0), 1.0);
        assert!((s.alpha(100) - 0.5).abs() < 1e-15);
        assert_eq!(s.epsilon(0, 0), 1.0);
        assert_eq!(s.epsilon(0, 10_000), 0.01);
        assert!((s.epsilon(3, 10) - 0.99f64.powi(10)).abs() < 1e-15);
        assert!(s.validate(4).is_ok());
        assert!(s.validate(3).is_err());
    }

    proptest! {
        #[test]
        fn time_varying_ratios_are_monotone(c4 in 1.0f64..5000.0, g in 0.5f64..0.999, t in 0u64..100_000) {
            for r in [
                UpdateRatio::Exponential { c4 },
                UpdateRatio::Hyperbolic { c4 },
                UpdateRatio::Geometric { c4: g },
            ] {
                let (a, b) = (r.at(t), r.at(t + 1));
                prop_assert!((0.0..1.0 + 1e-15).contains(&a));
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn rates_stay_in_range(c1 in 1.0f64..1e4, c2 in 0.5f64..1.0, c3 in 0.0f64..0.2, t in 0u64..1_000_000) {
            let s = ScheduleSet {
                alpha_c1: c1,
                epsilon_decay: vec![c2],
                epsilon_floor: c3,
                update: UpdateRatio::Constant { u: 0.5 },
            };
            let a = s.alpha(t);
            prop_assert!(a > 0.0 && a <= 1.0);
            let e = s.epsilon(0, t);
            prop_assert!(e >= c3 && e <= 1.0);
        }
    }

    #[test]
    fn ratios_approach_one() {
        for r in [
            UpdateRatio::Exponential { c4: 10.0 },
            UpdateRatio::Hyperbolic { c4: 10.0 },
            UpdateRatio::Geometric { c4: 0.5 },
        ] {
            assert!(r.at(1_000_000) > 0.9999);
        }
    }
}
