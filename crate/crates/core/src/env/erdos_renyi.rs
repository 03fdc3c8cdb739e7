use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TabularEnvironment;
use crate::error::{Error, Result};
use crate::mdp::{row_normalize, CostModel, Ptt};
use crate::rng::stream;

/// Random directed graph per action; each edge is kept independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErdosRenyiSpec {
    pub num_states: usize,
    #[serde(default = "default_actions")]
    pub num_actions: usize,
    #[serde(default = "default_edge_probability")]
    pub edge_probability: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_actions() -> usize {
    2
}

fn default_edge_probability() -> f64 {
    0.2
}

impl ErdosRenyiSpec {
    pub fn new(num_states: usize, num_actions: usize, seed: u64) -> Self {
        Self {
            num_states,
            num_actions,
            edge_probability: default_edge_probability(),
            seed,
        }
    }
}

/// Adjacency rows with no out-edge get a self-loop, then each row is
/// normalized; stage costs are i.i.d. uniform on `[0, 1]` per `(s, a)`.
pub fn build_er_env(spec: &ErdosRenyiSpec) -> Result<TabularEnvironment> {
    if spec.num_states < 2 {
        return Err(Error::invalid("num_states", "an Erdos-Renyi model needs at least 2 states"));
    }
    if spec.num_actions == 0 {
        return Err(Error::invalid("num_actions", "at least one action is required"));
    }
    let p = spec.edge_probability;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("edge_probability", format!("{p} is outside (0, 1]")));
    }
    let n = spec.num_states;
    let mut rng = stream(spec.seed, 0);
    let mut matrices = Vec::with_capacity(spec.num_actions);
    for _ in 0..spec.num_actions {
        let mut adj = DMatrix::from_fn(n, n, |_, _| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        for s in 0..n {
            if adj.row(s).iter().all(|x| *x == 0.0) {
                adj[(s, s)] = 1.0;
            }
        }
        matrices.push(row_normalize(&adj)?.0);
    }
    let costs = DMatrix::from_fn(n, spec.num_actions, |_, _| rng.random::<f64>());
    TabularEnvironment::new(Ptt::new(matrices)?, CostModel::from_expected(costs)?, spec.seed, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_ptt, STOCHASTIC_TOL};

    #[test]
    fn same_seed_same_environment() {
        let spec = ErdosRenyiSpec::new(25, 3, 11);
        let (a, b) = (build_er_env(&spec).unwrap(), build_er_env(&spec).unwrap());
        assert_eq!(a.ptt(), b.ptt());
        assert_eq!(a.costs(), b.costs());
        let other = build_er_env(&ErdosRenyiSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.ptt(), other.ptt());
    }

    #[test]
    fn complete_graph_rows_are_uniform() {
        let spec = ErdosRenyiSpec {
            edge_probability: 1.0,
            ..ErdosRenyiSpec::new(6, 2, 0)
        };
        let env = build_er_env(&spec).unwrap();
        for m in env.ptt().matrices() {
            assert!(m.iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
        }
    }

    #[test]
    fn out_degree_matches_binomial() {
        let spec = ErdosRenyiSpec::new(50, 2, 7);
        let env = build_er_env(&spec).unwrap();
        let (n, p) = (50.0_f64, 0.2_f64);
        let sigma = (n * p * (1.0 - p)).sqrt();
        let mut total = 0usize;
        for m in env.ptt().matrices() {
            for s in 0..50 {
                let degree = m.row(s).iter().filter(|x| **x > 0.0).count();
                total += degree;
                // a zero row gets a self-loop, so the degree is at least 1
                assert!(degree >= 1);
            }
        }
        let mean = total as f64 / 100.0;
        // mean of 100 rows: sigma / 10
        assert!((mean - n * p).abs() < 3.0 * sigma / 10.0, "mean out-degree {mean}");
        assert!(validate_ptt(env.ptt().matrices(), STOCHASTIC_TOL).passed());
        assert!(env.costs().expected().iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn tiny_or_invalid_specs_are_rejected() {
        assert!(build_er_env(&ErdosRenyiSpec::new(1, 2, 0)).is_err());
        let zero_p = ErdosRenyiSpec {
            edge_probability: 0.0,
            ..ErdosRenyiSpec::new(5, 2, 0)
        };
        assert!(build_er_env(&zero_p).is_err());
    }
}
