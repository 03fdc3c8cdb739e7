//! Sample-averaged transition model and the n-hop synthetic environments
//! built from it.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::TabularEnvironment;
use crate::error::{Error, Result};
use crate::mdp::{matrix_power_ptt, row_normalize, CostModel, Ptt};

/// What the minimum-visit requirement counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisitRule {
    /// Every observed `(s, s', a)` transition.
    #[default]
    Triple,
    /// Every observed `(s, s')` pair, summed over actions.
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub trajectory_length: usize,
    pub min_visits: usize,
    pub num_environments: usize,
    pub orders: Vec<usize>,
    pub max_total_samples: usize,
    #[serde(default)]
    pub visit_rule: VisitRule,
}

impl SamplingConfig {
    pub fn new(trajectory_length: usize, min_visits: usize, orders: Vec<usize>) -> Self {
        Self {
            trajectory_length,
            min_visits,
            num_environments: orders.len(),
            orders,
            max_total_samples: 5_000_000,
            visit_rule: VisitRule::Triple,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectory_length == 0 {
            return Err(Error::invalid("trajectory_length", "must be at least 1"));
        }
        if self.min_visits == 0 {
            return Err(Error::invalid("min_visits", "must be at least 1"));
        }
        if self.num_environments < 2 {
            return Err(Error::invalid("num_environments", "the ensemble needs at least 2 environments"));
        }
        if self.orders.len() != self.num_environments {
            return Err(Error::invalid(
                "orders",
                format!("{} orders given for {} environments", self.orders.len(), self.num_environments),
            ));
        }
        if self.orders.first() != Some(&1) {
            return Err(Error::invalid("orders", "the first order must be 1 (the original environment)"));
        }
        let mut sorted = self.orders.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.orders.len() || sorted[0] == 0 {
            return Err(Error::invalid("orders", "orders must be distinct and positive"));
        }
        if self.max_total_samples == 0 {
            return Err(Error::invalid("max_total_samples", "must be positive"));
        }
        Ok(())
    }
}

/// Running transition counts and cost sums.
#[derive(Debug, Clone)]
pub struct ModelEstimator {
    num_states: usize,
    num_actions: usize,
    min_visits: u64,
    /// `counts[a][(s, s')]`
    counts: Vec<DMatrix<u64>>,
    pair_counts: DMatrix<u64>,
    cost_sums: DMatrix<f64>,
    cost_counts: DMatrix<u64>,
    /// Observed entries still below `min_visits`.
    triple_deficit: usize,
    pair_deficit: usize,
    samples: u64,
}

impl ModelEstimator {
    pub fn new(num_states: usize, num_actions: usize, min_visits: usize) -> Self {
        Self {
            num_states,
            num_actions,
            min_visits: min_visits.max(1) as u64,
            counts: vec![DMatrix::zeros(num_states, num_states); num_actions],
            pair_counts: DMatrix::zeros(num_states, num_states),
            cost_sums: DMatrix::zeros(num_states, num_actions),
            cost_counts: DMatrix::zeros(num_states, num_actions),
            triple_deficit: 0,
            pair_deficit: 0,
            samples: 0,
        }
    }

    pub fn observe(&mut self, s: usize, a: usize, next: usize, cost: f64) {
        let v = self.min_visits;
        let c = &mut self.counts[a][(s, next)];
        *c += 1;
        if *c == 1 && v > 1 {
            self.triple_deficit += 1;
        } else if *c == v && v > 1 {
            self.triple_deficit -= 1;
        }
        let p = &mut self.pair_counts[(s, next)];
        *p += 1;
        if *p == 1 && v > 1 {
            self.pair_deficit += 1;
        } else if *p == v && v > 1 {
            self.pair_deficit -= 1;
        }
        self.cost_sums[(s, a)] += cost;
        self.cost_counts[(s, a)] += 1;
        self.samples += 1;
    }

    /// One trajectory of `length` uniform-random actions from a uniform start.
    pub fn sample_trajectory(&mut self, env: &TabularEnvironment, length: usize, rng: &mut impl Rng) {
        let mut s = env.reset(rng);
        for _ in 0..length {
            let a = rng.random_range(0..self.num_actions);
            let (next, cost) = env.step(s, a, rng);
            self.observe(s, a, next, cost);
            s = next;
        }
    }

    /// Every observed transition has been seen `min_visits` times.
    pub fn satisfied(&self, rule: VisitRule) -> bool {
        self.samples > 0
            && match rule {
                VisitRule::Triple => self.triple_deficit == 0,
                VisitRule::Pair => self.pair_deficit == 0,
            }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn counts(&self) -> &[DMatrix<u64>] {
        &self.counts
    }

    /// Visits per `(s, a)`.
    pub fn action_counts(&self) -> &DMatrix<u64> {
        &self.cost_counts
    }

    /// Normalized `1/|S| + counts`.
    pub fn p_hat(&self) -> Result<Ptt> {
        let prior = 1.0 / self.num_states as f64;
        let matrices = self
            .counts
            .iter()
            .map(|c| row_normalize(&c.map(|x| x as f64 + prior)).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        Ptt::new(matrices)
    }

    /// Mean observed cost per `(s, a)`; `fallback` fills unvisited pairs.
    pub fn c_hat(&self, fallback: &CostModel) -> Result<CostModel> {
        let expected = DMatrix::from_fn(self.num_states, self.num_actions, |s, a| {
            match self.cost_counts[(s, a)] {
                0 => fallback.cost(s, a),
                n => self.cost_sums[(s, a)] / n as f64,
            }
        });
        CostModel::from_expected(expected)
    }
}

#[derive(Debug, Clone)]
pub struct EstimatedModel {
    pub counts: Vec<DMatrix<u64>>,
    pub prior_mass: f64,
    pub p_hat: Ptt,
    pub c_hat: CostModel,
    pub samples_used: u64,
    pub min_visits: usize,
    pub sample_cap: usize,
    /// False when the sample cap stopped estimation before the visit rule held.
    pub complete: bool,
}

impl EstimatedModel {
    pub fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("samples_used".into(), self.samples_used.to_string()),
            ("min_visits".into(), self.min_visits.to_string()),
            ("sample_cap".into(), self.sample_cap.to_string()),
            ("complete".into(), self.complete.to_string()),
        ]
    }
}

/// Samples `env` until the visit rule holds or the sample cap is reached.
pub fn estimate_model(env: &TabularEnvironment, cfg: &SamplingConfig, rng: &mut impl Rng) -> Result<EstimatedModel> {
    estimate_model_with(env, cfg, rng, |_| {})
}

/// As [`estimate_model`], calling `after_trajectory` after every trajectory.
pub fn estimate_model_with(
    env: &TabularEnvironment,
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
    mut after_trajectory: impl FnMut(&ModelEstimator),
) -> Result<EstimatedModel> {
    if cfg.trajectory_length == 0 || cfg.min_visits == 0 || cfg.max_total_samples == 0 {
        return Err(Error::invalid("sampling", "trajectory length, visits and cap must be positive"));
    }
    let mut est = ModelEstimator::new(env.num_states(), env.num_actions(), cfg.min_visits);
    let cap = cfg.max_total_samples as u64;
    let mut complete = false;
    while est.samples() < cap {
        let length = cfg.trajectory_length.min((cap - est.samples()) as usize);
        est.sample_trajectory(env, length, rng);
        after_trajectory(&est);
        if est.satisfied(cfg.visit_rule) {
            complete = true;
            break;
        }
    }
    if !complete {
        log::warn!("estimation stopped at the sample cap ({cap}) before every transition reached {} visits", cfg.min_visits);
    }
    Ok(EstimatedModel {
        p_hat: est.p_hat()?,
        c_hat: est.c_hat(env.costs())?,
        prior_mass: 1.0 / env.num_states() as f64,
        samples_used: est.samples(),
        counts: est.counts,
        min_visits: cfg.min_visits,
        sample_cap: cfg.max_total_samples,
        complete,
    })
}

/// One environment per order: order 1 wraps the estimate, order `n` uses the
/// `n`-th power of every estimated action matrix. All share the estimated
/// expected costs.
pub fn build_multiscale_envs(model: &EstimatedModel, orders: &[usize]) -> Result<Vec<TabularEnvironment>> {
    multiscale_from(&model.p_hat, &model.c_hat, orders)
}

pub fn multiscale_from(ptt: &Ptt, costs: &CostModel, orders: &[usize]) -> Result<Vec<TabularEnvironment>> {
    let costs = costs.expected_only();
    orders
        .iter()
        .map(|&n| TabularEnvironment::new(matrix_power_ptt(ptt, n)?, costs.clone(), 0, n))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixNorm {
    #[default]
    Frobenius,
    Spectral,
}

/// `(1/|A|) sum_a |P_a - P_hat_a|`.
pub fn estimation_error(truth: &Ptt, estimate: &Ptt, norm: MatrixNorm) -> Result<f64> {
    if truth.num_states() != estimate.num_states() || truth.num_actions() != estimate.num_actions() {
        return Err(Error::Dimension("tensors have different shapes".into()));
    }
    let total: f64 = truth
        .matrices()
        .iter()
        .zip(estimate.matrices())
        .map(|(p, q)| {
            let d = p - q;
            match norm {
                MatrixNorm::Frobenius => d.norm(),
                MatrixNorm::Spectral => d.singular_values().max(),
            }
        })
        .sum();
    Ok(total / truth.num_actions() as f64)
}

/// `first, 2 first, 4 first, ...` below `last`, then `last`.
pub fn geometric_milestones(first: u64, last: u64) -> Result<Vec<u64>> {
    if first == 0 || last < first {
        return Err(Error::invalid("milestones", format!("need 0 < first <= last, got {first} and {last}")));
    }
    let mut out = Vec::new();
    let mut m = first;
    while m < last {
        out.push(m);
        m = m.saturating_mul(2);
    }
    out.push(last);
    Ok(out)
}

/// Estimation error after exactly each milestone's number of samples, from a
/// single sampling pass; the last trajectory before a milestone is cut short
/// so the counts land on it.
pub fn error_at_milestones(
    env: &TabularEnvironment,
    trajectory_length: usize,
    milestones: &[u64],
    norm: MatrixNorm,
    rng: &mut impl Rng,
) -> Result<Vec<(u64, f64)>> {
    if trajectory_length == 0 {
        return Err(Error::invalid("trajectory_length", "must be at least 1"));
    }
    if milestones.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("milestones", "must be strictly increasing"));
    }
    let mut est = ModelEstimator::new(env.num_states(), env.num_actions(), 1);
    let mut out = Vec::with_capacity(milestones.len());
    for &m in milestones {
        while est.samples() < m {
            let length = (trajectory_length as u64).min(m - est.samples()) as usize;
            est.sample_trajectory(env, length, rng);
        }
        out.push((m, estimation_error(env.ptt(), &est.p_hat()?, norm)?));
    }
    Ok(out)
}

/// Hop orders for a `k`-environment ensemble: 1, 2, 3, then increasing
/// orders whose odd part is not already chosen (an order `2^j m` is ranked
/// farther from the original than `m`). Orders skipped that way fill any
/// remaining slots, smallest first.
pub fn select_orders(k: usize, max_order: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("num_environments", "the ensemble needs at least 2 environments"));
    }
    if max_order < k {
        return Err(Error::invalid("max_order", format!("{max_order} is below K = {k}")));
    }
    let mut chosen: Vec<usize> = (1..=3.min(k)).collect();
    let mut skipped = Vec::new();
    for n in 4..=max_order {
        if chosen.len() == k {
            break;
        }
        let mut odd = n;
        while odd % 2 == 0 {
            odd /= 2;
        }
        if chosen.contains(&odd) {
            skipped.push(n);
        } else {
            chosen.push(n);
        }
    }
    chosen.extend(skipped.into_iter().take(k - chosen.len()));
    Ok(chosen)
}
