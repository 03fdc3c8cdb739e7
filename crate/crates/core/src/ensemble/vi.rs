use nalgebra::DVector;

use super::neql::{RunOptions, Termination};
use super::schedule::UpdateRatio;
use super::weighting::softmax;
use crate::analysis::ape_of_tables;
use crate::env::TabularEnvironment;
use crate::error::{Error, Result};
use crate::estimation::{ModelEstimator, SamplingConfig};
use crate::mdp::{
    greedy_policy_from_q, matrix_power_ptt, q_from_values, value_iteration_from, CostModel, DiscountFactor, Policy,
    Ptt, QTable, ValueFunction,
};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::rng::{stream, ESTIMATION_STREAM};

/// Trajectories between rebuilds of the n-hop models.
pub const REBUILD_EVERY: u64 = 10;

const VI_TOL: f64 = 1e-8;
const VI_MAX_ITERS: usize = 1_000_000;

/// Value functions of the n-hop models and their blended iterate.
#[derive(Debug, Clone)]
pub struct ViEnsemble {
    orders: Vec<usize>,
    values: Vec<DVector<f64>>,
    weights: Vec<f64>,
    v_it: DVector<f64>,
}

impl ViEnsemble {
    pub fn new(num_states: usize, orders: Vec<usize>) -> Self {
        let k = orders.len();
        Self {
            values: vec![DVector::zeros(num_states); k],
            weights: vec![1.0 / k as f64; k],
            v_it: DVector::zeros(num_states),
            orders,
        }
    }

    /// Re-solves every n-hop model of `(ptt, costs)`, warm-started from the
    /// previous solutions, and resets the weights to
    /// `softmax(-||v_1 - v_n||_2)`.
    pub fn refresh(&mut self, ptt: &Ptt, costs: &CostModel, gamma: DiscountFactor) -> Result<()> {
        for (n, &order) in self.orders.iter().enumerate() {
            let powered = matrix_power_ptt(ptt, order)?;
            let sol = value_iteration_from(&powered, costs, gamma, VI_TOL, VI_MAX_ITERS, Some(&self.values[n]))?;
            self.values[n] = sol.values.vector().clone();
        }
        let raw: Vec<f64> = self.values.iter().map(|v| -(&self.values[0] - v).norm()).collect();
        self.weights = softmax(&raw);
        Ok(())
    }

    /// `v_it <- u v_it + (1 - u) sum_n w_n v_n`.
    pub fn blend(&mut self, u: f64) {
        let mix = self
            .values
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.v_it.len()), |acc, (v, w)| acc + v * *w);
        self.v_it = &self.v_it * u + mix * (1.0 - u);
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn v_it(&self) -> &DVector<f64> {
        &self.v_it
    }
}

#[derive(Debug, Clone)]
pub struct ViRunOutput {
    pub values: ValueFunction,
    pub policy: Policy,
    pub log: MetricsLog,
}

/// Model-based ensemble: keeps sampling `original` to refine the estimate,
/// re-solves the n-hop models every [`REBUILD_EVERY`] trajectories and blends
/// their value functions. Logged `t` counts samples drawn.
pub fn run_vi_ensemble(
    original: &TabularEnvironment,
    cfg: &SamplingConfig,
    update: UpdateRatio,
    gamma: DiscountFactor,
    seed: u64,
    opts: &RunOptions,
) -> Result<ViRunOutput> {
    cfg.validate()?;
    let (ns, na) = (original.num_states(), original.num_actions());
    if opts.probes.iter().any(|&(s, a)| s >= ns || a >= na) {
        return Err(Error::invalid("probes", "probe cell outside the state-action space"));
    }
    let mut rng = stream(seed, ESTIMATION_STREAM);
    let mut est = ModelEstimator::new(ns, na, cfg.min_visits);
    let mut ensemble = ViEnsemble::new(ns, cfg.orders.clone());
    let mut log = MetricsLog::new("vi", cfg.orders.clone(), opts.probes.clone());
    let l = opts.trajectory_length as u64;
    let limit = match opts.termination {
        Termination::Visits { max_iterations, .. } => max_iterations,
        Termination::Budget(n) => n,
    };
    let mut iteration = 0u64;
    let mut complete = false;
    let mut model = (Ptt::identity(ns, na), original.costs().expected_only());
    while est.samples() < limit {
        let length = l.min(limit - est.samples()) as usize;
        est.sample_trajectory(original, length, &mut rng);
        if iteration.is_multiple_of(REBUILD_EVERY) {
            model = (est.p_hat()?, est.c_hat(original.costs())?);
            ensemble.refresh(&model.0, &model.1, gamma)?;
        }
        let u = update.at(iteration);
        ensemble.blend(u);
        let t = est.samples() - 1;
        if iteration.is_multiple_of(opts.log_every) {
            log.rows.push(vi_row(t, u, &ensemble, &model, gamma, opts)?);
        }
        iteration += 1;
        match opts.termination {
            Termination::Visits { min_visits, .. } => {
                if est.action_counts().iter().all(|&c| c >= min_visits as u64) {
                    complete = true;
                    break;
                }
            }
            Termination::Budget(n) => complete = est.samples() >= n,
        }
    }
    if est.samples() > 0 && log.rows.last().is_none_or(|r| r.t != est.samples() - 1) {
        let u = update.at(iteration - 1);
        log.rows.push(vi_row(est.samples() - 1, u, &ensemble, &model, gamma, opts)?);
    }
    log.iterations = est.samples();
    log.complete = complete;
    log.estimation_samples = est.samples();
    let q = q_from_values(&model.0, &model.1, gamma, ensemble.v_it());
    Ok(ViRunOutput {
        policy: greedy_policy_from_q(&q),
        values: ValueFunction::new(ensemble.v_it().clone()),
        log,
    })
}

fn vi_row(
    t: u64,
    u: f64,
    ensemble: &ViEnsemble,
    (ptt, costs): &(Ptt, CostModel),
    gamma: DiscountFactor,
    opts: &RunOptions,
) -> Result<MetricsRow> {
    let mut r = MetricsRow {
        t,
        u: Some(u),
        weights: ensemble.weights().to_vec(),
        ape: None,
        learner_ape: Vec::new(),
        probe_errors: Vec::new(),
        learner_probe_errors: Vec::new(),
    };
    if let Some(reference) = &opts.reference {
        let star = &reference.q_star;
        let q_it = q_from_values(ptt, costs, gamma, ensemble.v_it());
        let learners: Vec<QTable> = ensemble.values().iter().map(|v| q_from_values(ptt, costs, gamma, v)).collect();
        r.ape = Some(ape_of_tables(star, &q_it, reference.tol)?);
        r.learner_ape = learners
            .iter()
            .map(|q| ape_of_tables(star, q, reference.tol))
            .collect::<Result<_>>()?;
        r.probe_errors = opts.probes.iter().map(|&(s, a)| q_it.get(s, a) - star.get(s, a)).collect();
        r.learner_probe_errors = learners
            .iter()
            .flat_map(|q| opts.probes.iter().map(move |&(s, a)| q.get(s, a) - star.get(s, a)))
            .collect();
    }
    Ok(r)
}
