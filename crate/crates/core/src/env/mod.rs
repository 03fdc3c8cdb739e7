//! Tabular environments with seeded sampling.

mod cliff;
mod erdos_renyi;
mod siso;

pub use cliff::{build_cliffwalk_env, CliffMove, CliffWalkSpec};
pub use erdos_renyi::{build_er_env, ErdosRenyiSpec};
pub use siso::{build_siso_env, SisoAction, SisoSpec};

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{CostModel, Ptt};

/// Cumulative distribution over the support of one `(s, a)` row.
#[derive(Debug, Clone)]
struct RowSampler {
    support: Vec<usize>,
    cumulative: Vec<f64>,
}

impl RowSampler {
    fn new(row: impl Iterator<Item = f64>) -> Self {
        let mut support = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (next, p) in row.enumerate() {
            if p > 0.0 {
                acc += p;
                support.push(next);
                cumulative.push(acc);
            }
        }
        Self { support, cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("rows of a valid tensor have support");
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.support[i.min(self.support.len() - 1)]
    }
}

/// A transition tensor plus costs, labelled with its hop order
/// (1 for the original environment).
#[derive(Debug, Clone)]
pub struct TabularEnvironment {
    ptt: Ptt,
    costs: CostModel,
    seed: u64,
    order: usize,
    samplers: Vec<RowSampler>,
}

impl TabularEnvironment {
    pub fn new(ptt: Ptt, costs: CostModel, seed: u64, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("order", "environment order starts at 1"));
        }
        if costs.num_states() != ptt.num_states() || costs.num_actions() != ptt.num_actions() {
            return Err(Error::Dimension(format!(
                "costs are {}x{}, tensor has {} states and {} actions",
                costs.num_states(),
                costs.num_actions(),
                ptt.num_states(),
                ptt.num_actions()
            )));
        }
        let (n, k) = (ptt.num_states(), ptt.num_actions());
        let mut samplers = Vec::with_capacity(n * k);
        for s in 0..n {
            for a in 0..k {
                samplers.push(RowSampler::new(ptt.action(a).row(s).iter().copied()));
            }
        }
        Ok(Self {
            ptt,
            costs,
            seed,
            order,
            samplers,
        })
    }

    pub fn ptt(&self) -> &Ptt {
        &self.ptt
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_states(&self) -> usize {
        self.ptt.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.ptt.num_actions()
    }

    /// Samples `s'` from `p_a(s, .)` and returns it with the incurred cost.
    pub fn step(&self, s: usize, a: usize, rng: &mut impl Rng) -> (usize, f64) {
        let next = self.samplers[s * self.num_actions() + a].sample(rng);
        (next, self.costs.sample_cost(s, a, next))
    }

    /// Uniform initial state.
    pub fn reset(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(0..self.num_states())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use nalgebra::DMatrix;

    fn two_row_env() -> TabularEnvironment {
        let p = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, 0.0, 1.0, 0.25, 0.75, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25, 1.0, 0.0, 0.0, 0.0],
        );
        let t = DMatrix::from_fn(4, 4, |s, next| (10 * s + next) as f64);
        let ptt = Ptt::new(vec![p]).unwrap();
        let costs = CostModel::from_transition_costs(&ptt, vec![t]).unwrap();
        TabularEnvironment::new(ptt, costs, 0, 1).unwrap()
    }

    #[test]
    fn point_mass_row_is_deterministic() {
        let env = two_row_env();
        let mut rng = stream(1, 0);
        for _ in 0..100 {
            assert_eq!(env.step(0, 0, &mut rng), (3, 3.0));
        }
    }

    #[test]
    fn row_frequencies_within_three_sigma() {
        let env = two_row_env();
        let mut rng = stream(2, 0);
        let draws = 100_000;
        let hits = (0..draws).filter(|_| env.step(1, 0, &mut rng).0 == 1).count();
        let sigma = (draws as f64 * 0.75 * 0.25).sqrt();
        assert!((hits as f64 - 0.75 * draws as f64).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn same_stream_state_same_sample() {
        let env = two_row_env();
        let (mut a, mut b) = (stream(9, 4), stream(9, 4));
        for _ in 0..50 {
            assert_eq!(env.step(2, 0, &mut a), env.step(2, 0, &mut b));
            assert_eq!(env.reset(&mut a), env.reset(&mut b));
        }
    }

    #[test]
    fn reset_is_uniform() {
        let env = TabularEnvironment::new(Ptt::identity(10, 1), CostModel::uniform(10, 1, 0.0), 0, 1).unwrap();
        let mut rng = stream(3, 0);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws {
            counts[env.reset(&mut rng)] += 1;
        }
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 0.1 * draws as f64).abs() < 3.0 * sigma, "{counts:?}");
        }
        let single = TabularEnvironment::new(Ptt::identity(1, 2), CostModel::uniform(1, 2, 0.0), 0, 1).unwrap();
        assert!((0..20).all(|_| single.reset(&mut rng) == 0));
    }

    #[test]
    fn mismatched_costs_are_rejected() {
        let r = TabularEnvironment::new(Ptt::identity(3, 2), CostModel::uniform(3, 1, 0.0), 0, 1);
        assert!(matches!(r, Err(Error::Dimension(_))));
        let r = TabularEnvironment::new(Ptt::identity(3, 2), CostModel::uniform(3, 2, 0.0), 0, 0);
        assert!(r.is_err());
    }
}
