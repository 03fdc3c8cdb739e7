use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::TabularEnvironment;
use crate::error::{Error, Result};
use crate::mdp::{CostModel, Ptt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SisoAction {
    Transmit = 0,
    Silent = 1,
}

/// Single transmitter with a finite packet buffer. The state is the buffer
/// occupancy `0..=buffer_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SisoSpec {
    pub buffer_size: usize,
    #[serde(default = "defaults::arrival")]
    pub arrival_prob: f64,
    #[serde(default = "defaults::success")]
    pub success_prob: f64,
    #[serde(default = "defaults::transmit_cost")]
    pub transmit_cost: f64,
    #[serde(default = "defaults::drop_cost")]
    pub drop_cost: f64,
}

mod defaults {
    pub fn arrival() -> f64 {
        0.5
    }
    pub fn success() -> f64 {
        0.8
    }
    pub fn transmit_cost() -> f64 {
        1.0
    }
    pub fn drop_cost() -> f64 {
        5.0
    }
}

impl SisoSpec {
    pub fn new(buffer_size: usize) -> Self {
        Self {
            buffer_size,
            arrival_prob: defaults::arrival(),
            success_prob: defaults::success(),
            transmit_cost: defaults::transmit_cost(),
            drop_cost: defaults::drop_cost(),
        }
    }
}

/// Per step: a transmission attempt (cost `transmit_cost`) removes one packet
/// with probability `success_prob` when the buffer is nonempty; then a packet
/// arrives with probability `arrival_prob` and is dropped, at `drop_cost`, when
/// the buffer is full. Costs are expected stage costs per `(s, a)`.
pub fn build_siso_env(spec: &SisoSpec) -> Result<TabularEnvironment> {
    for (field, p) in [("arrival_prob", spec.arrival_prob), ("success_prob", spec.success_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(field, format!("{p} is not a probability")));
        }
    }
    if !spec.transmit_cost.is_finite() || !spec.drop_cost.is_finite() {
        return Err(Error::invalid("transmit_cost", "costs must be finite"));
    }
    let b = spec.buffer_size;
    let n = b + 1;
    let (arrive, success) = (spec.arrival_prob, spec.success_prob);
    let mut matrices = vec![DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    let mut costs = DMatrix::zeros(n, 2);
    for action in [SisoAction::Transmit, SisoAction::Silent] {
        let a = action as usize;
        for s in 0..n {
            let departures: &[(usize, f64)] = match action {
                SisoAction::Transmit if s > 0 => &[(1, success), (0, 1.0 - success)],
                _ => &[(0, 1.0)],
            };
            let mut drop_prob = 0.0;
            for &(d, pd) in departures {
                let after = s - d;
                for (arrival, pa) in [(1usize, arrive), (0, 1.0 - arrive)] {
                    let prob = pd * pa;
                    if prob == 0.0 {
                        continue;
                    }
                    let raw = after + arrival;
                    if raw > b {
                        drop_prob += prob;
                    }
                    matrices[a][(s, raw.min(b))] += prob;
                }
            }
            let attempt = if action == SisoAction::Transmit { spec.transmit_cost } else { 0.0 };
            costs[(s, a)] = attempt + spec.drop_cost * drop_prob;
        }
    }
    TabularEnvironment::new(Ptt::new(matrices)?, CostModel::from_expected(costs)?, 0, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{value_iteration, DiscountFactor};
    use crate::rng::stream;

    #[test]
    fn empty_buffer_is_a_single_state() {
        let env = build_siso_env(&SisoSpec::new(0)).unwrap();
        assert_eq!(env.num_states(), 1);
        assert_eq!(env.num_actions(), 2);
    }

    #[test]
    fn certain_success_drains_the_buffer() {
        let spec = SisoSpec {
            arrival_prob: 0.0,
            success_prob: 1.0,
            ..SisoSpec::new(4)
        };
        let env = build_siso_env(&spec).unwrap();
        let mut rng = stream(5, 0);
        let mut s = 4;
        for expected in (0..4).rev() {
            let (next, cost) = env.step(s, SisoAction::Transmit as usize, &mut rng);
            assert_eq!((next, cost), (expected, spec.transmit_cost));
            s = next;
        }
    }

    #[test]
    fn optimal_policy_is_a_buffer_threshold() {
        let env = build_siso_env(&SisoSpec::new(5)).unwrap();
        let sol = value_iteration(env.ptt(), env.costs(), DiscountFactor::new(0.95).unwrap(), 1e-10, 10_000).unwrap();
        let transmit: Vec<bool> = (0..6).map(|s| sol.policy.action(s) == SisoAction::Transmit as usize).collect();
        let first = transmit.iter().position(|t| *t).expect("some occupancy transmits");
        assert!(transmit[first..].iter().all(|t| *t), "{transmit:?}");
        assert!(!transmit[0], "transmitting from an empty buffer only costs");
    }

    #[test]
    fn bad_probability_is_rejected() {
        let spec = SisoSpec {
            arrival_prob: 1.5,
            ..SisoSpec::new(3)
        };
        assert!(build_siso_env(&spec).is_err());
    }
}
