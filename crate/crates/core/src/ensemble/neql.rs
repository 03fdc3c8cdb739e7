use nalgebra::DMatrix;
use rand::Rng;

use super::learner::LearnerState;
use super::schedule::ScheduleSet;
use super::weighting::{ensemble_update_in_place, softmax, weight_bounds, WeightTracker};
use crate::analysis::ape_of_tables;
use crate::env::TabularEnvironment;
use crate::error::{Error, Result};
use crate::estimation::{build_multiscale_envs, estimate_model, SamplingConfig};
use crate::mdp::{greedy_policy_from_q, DiscountFactor, Policy, QTable};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::rng::{learner_stream, stream, CONTROL_STREAM, ESTIMATION_STREAM};

/// When a training run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Every `(s, a)` of the original environment visited `min_visits` times,
    /// checked after each trajectory; `max_iterations` ends the run as incomplete.
    Visits { min_visits: usize, max_iterations: u64 },
    /// Exactly this many time steps.
    Budget(u64),
}

impl Termination {
    fn limit(self) -> u64 {
        match self {
            Termination::Visits { max_iterations, .. } => max_iterations,
            Termination::Budget(n) => n,
        }
    }
}

/// Optimal action values used to score a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub q_star: QTable,
    pub policy: Policy,
    /// Slack when deciding whether an action is optimal.
    pub tol: f64,
}

impl Reference {
    pub fn new(q_star: QTable) -> Self {
        let tol = 1e-9 * q_star.matrix().amax().max(1.0);
        Self {
            policy: greedy_policy_from_q(&q_star),
            q_star,
            tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub trajectory_length: usize,
    pub termination: Termination,
    pub reference: Option<Reference>,
    /// Cells whose errors against the reference are logged.
    pub probes: Vec<(usize, usize)>,
    /// Log every this many steps; the last step is always logged.
    pub log_every: u64,
}

impl RunOptions {
    pub fn new(trajectory_length: usize, termination: Termination) -> Self {
        Self {
            trajectory_length,
            termination,
            reference: None,
            probes: Vec::new(),
            log_every: 1,
        }
    }

    pub fn from_sampling(cfg: &SamplingConfig, max_iterations: u64) -> Self {
        Self::new(
            cfg.trajectory_length,
            Termination::Visits {
                min_visits: cfg.min_visits,
                max_iterations,
            },
        )
    }

    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_probes(mut self, probes: Vec<(usize, usize)>) -> Self {
        self.probes = probes;
        self
    }

    pub fn with_log_every(mut self, every: u64) -> Self {
        self.log_every = every;
        self
    }

    fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if self.trajectory_length == 0 {
            return Err(Error::invalid("trajectory_length", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every", "must be at least 1"));
        }
        if let Termination::Visits { min_visits: 0, .. } = self.termination {
            return Err(Error::invalid("min_visits", "must be at least 1"));
        }
        if let Some(r) = &self.reference {
            if r.q_star.matrix().shape() != (num_states, num_actions) {
                return Err(Error::Dimension("reference Q does not match the environment".into()));
            }
        }
        if !self.probes.is_empty() && self.reference.is_none() {
            return Err(Error::invalid("probes", "probe errors need a reference Q"));
        }
        if self.probes.iter().any(|&(s, a)| s >= num_states || a >= num_actions) {
            return Err(Error::invalid("probes", "probe cell outside the state-action space"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub q: QTable,
    pub policy: Policy,
    pub log: MetricsLog,
    /// Final table of every learner, in order.
    pub learner_tables: Vec<QTable>,
}

/// Counts visits to the original environment's `(s, a)` pairs.
struct VisitCounter {
    counts: DMatrix<u64>,
    min_visits: u64,
    deficit: usize,
}

impl VisitCounter {
    fn new(num_states: usize, num_actions: usize, min_visits: usize) -> Self {
        Self {
            counts: DMatrix::zeros(num_states, num_actions),
            min_visits: min_visits as u64,
            deficit: num_states * num_actions,
        }
    }

    fn record(&mut self, s: usize, a: usize) {
        let c = &mut self.counts[(s, a)];
        *c += 1;
        if *c == self.min_visits {
            self.deficit -= 1;
        }
    }

    fn done(&self) -> bool {
        self.deficit == 0
    }
}

/// Estimates the model of `original`, builds the n-hop environments for
/// `cfg.orders` and trains the ensemble. The first learner interacts with
/// `original` itself; the others sample from powers of the estimate.
pub fn run_neql(
    original: &TabularEnvironment,
    cfg: &SamplingConfig,
    schedules: &ScheduleSet,
    gamma: DiscountFactor,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut rng = stream(seed, ESTIMATION_STREAM);
    let model = estimate_model(original, cfg, &mut rng)?;
    let mut envs = build_multiscale_envs(&model, &cfg.orders)?;
    envs[0] = original.clone();
    let mut out = run_neql_on(envs, schedules, gamma, seed, opts)?;
    out.log.estimation_samples = model.samples_used;
    Ok(out)
}

/// Trains one learner per environment; `envs[0]` is the one whose visits
/// drive termination and whose table anchors the weights.
pub fn run_neql_on(
    envs: Vec<TabularEnvironment>,
    schedules: &ScheduleSet,
    gamma: DiscountFactor,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let k = envs.len();
    if k < 2 {
        return Err(Error::invalid("environments", "the ensemble needs at least 2 environments"));
    }
    let (ns, na) = (envs[0].num_states(), envs[0].num_actions());
    if envs.iter().any(|e| e.num_states() != ns || e.num_actions() != na) {
        return Err(Error::Dimension("environments differ in shape".into()));
    }
    schedules.validate(k)?;
    opts.validate(ns, na)?;
    let orders: Vec<usize> = envs.iter().map(|e| e.order()).collect();
    let g = gamma.value();

    let mut control = stream(seed, CONTROL_STREAM);
    let mut learners: Vec<LearnerState> = envs
        .into_iter()
        .enumerate()
        .map(|(n, env)| LearnerState::new(env, learner_stream(seed, n)))
        .collect();
    let mut q_it = QTable::zeros(ns, na);
    let initial: Vec<f64> = (0..k).map(|_| control.random()).collect();
    let mut weights = softmax(&initial);
    let mut tracker = WeightTracker::new(&tables(&learners));
    let (lo, hi) = weight_bounds(k);

    let mut log = MetricsLog::new("neql", orders, opts.probes.clone());
    let mut visits = match opts.termination {
        Termination::Visits { min_visits, .. } => Some(VisitCounter::new(ns, na, min_visits)),
        Termination::Budget(_) => None,
    };
    let limit = opts.termination.limit();
    let mut changed = vec![0; k];
    let mut t = 0u64;
    let mut complete = matches!(opts.termination, Termination::Budget(_));
    while t < limit {
        let start = control.random_range(0..ns);
        for l in &mut learners {
            l.state = start;
        }
        for _ in 0..opts.trajectory_length {
            if t >= limit {
                break;
            }
            let alpha = schedules.alpha(t);
            for (n, learner) in learners.iter_mut().enumerate() {
                let step = learner.step(schedules.epsilon(n, t), alpha, g);
                changed[n] = step.state;
                if n == 0 {
                    if let Some(v) = visits.as_mut() {
                        v.record(step.state, step.action);
                    }
                }
            }
            let refs = tables(&learners);
            tracker.refresh(&refs, &changed);
            weights = tracker.weights();
            check_weights(&weights, lo, hi, t)?;
            let u = schedules.update_ratio(t);
            ensemble_update_in_place(&mut q_it, &refs, &weights, u)?;
            if t.is_multiple_of(opts.log_every) {
                log.rows.push(row(t, Some(u), &weights, &q_it, &refs, opts)?);
            }
            t += 1;
        }
        if visits.as_ref().is_some_and(VisitCounter::done) {
            complete = true;
            break;
        }
    }
    if !complete {
        log::warn!("nEQL stopped at the iteration cap ({limit}) before the visit rule held");
    }
    let refs = tables(&learners);
    if t > 0 && log.rows.last().is_none_or(|r| r.t != t - 1) {
        let u = schedules.update_ratio(t - 1);
        log.rows.push(row(t - 1, Some(u), &weights, &q_it, &refs, opts)?);
    }
    log.iterations = t;
    log.complete = complete;
    Ok(RunOutput {
        policy: greedy_policy_from_q(&q_it),
        q: q_it,
        learner_tables: refs.into_iter().cloned().collect(),
        log,
    })
}

/// Plain epsilon-greedy Q-learning on one environment with the same resets,
/// schedules and termination as the ensemble; uses the first learner's
/// exploration constant.
pub fn run_simple_q(
    env: &TabularEnvironment,
    schedules: &ScheduleSet,
    gamma: DiscountFactor,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let (ns, na) = (env.num_states(), env.num_actions());
    if schedules.epsilon_decay.is_empty() {
        return Err(Error::invalid("epsilon_decay", "one constant is required"));
    }
    let mut single = schedules.clone();
    single.epsilon_decay.truncate(1);
    single.validate(1)?;
    opts.validate(ns, na)?;
    let g = gamma.value();
    let mut control = stream(seed, CONTROL_STREAM);
    let mut learner = LearnerState::new(env.clone(), learner_stream(seed, 0));
    let mut log = MetricsLog::new("simple", vec![env.order()], opts.probes.clone());
    let mut visits = match opts.termination {
        Termination::Visits { min_visits, .. } => Some(VisitCounter::new(ns, na, min_visits)),
        Termination::Budget(_) => None,
    };
    let limit = opts.termination.limit();
    let mut t = 0u64;
    let mut complete = matches!(opts.termination, Termination::Budget(_));
    while t < limit {
        learner.state = control.random_range(0..ns);
        for _ in 0..opts.trajectory_length {
            if t >= limit {
                break;
            }
            let step = learner.step(single.epsilon(0, t), single.alpha(t), g);
            if let Some(v) = visits.as_mut() {
                v.record(step.state, step.action);
            }
            if t.is_multiple_of(opts.log_every) {
                log.rows.push(row(t, None, &[1.0], &learner.q, &[&learner.q], opts)?);
            }
            t += 1;
        }
        if visits.as_ref().is_some_and(VisitCounter::done) {
            complete = true;
            break;
        }
    }
    if t > 0 && log.rows.last().is_none_or(|r| r.t != t - 1) {
        log.rows.push(row(t - 1, None, &[1.0], &learner.q, &[&learner.q], opts)?);
    }
    log.iterations = t;
    log.complete = complete;
    Ok(RunOutput {
        policy: greedy_policy_from_q(&learner.q),
        q: learner.q.clone(),
        learner_tables: vec![learner.q],
        log,
    })
}

fn tables(learners: &[LearnerState]) -> Vec<&QTable> {
    learners.iter().map(|l| &l.q).collect()
}

fn check_weights(w: &[f64], lo: f64, hi: f64, t: u64) -> Result<()> {
    const SLACK: f64 = 1e-12;
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invariant(format!("weights sum to {total} at t = {t}")));
    }
    if let Some(x) = w.iter().find(|x| **x < lo - SLACK || **x > hi + SLACK) {
        return Err(Error::Invariant(format!("weight {x} outside [{lo}, {hi}] at t = {t}")));
    }
    Ok(())
}

fn row(t: u64, u: Option<f64>, weights: &[f64], q_it: &QTable, tables: &[&QTable], opts: &RunOptions) -> Result<MetricsRow> {
    let mut r = MetricsRow {
        t,
        u,
        weights: weights.to_vec(),
        ape: None,
        learner_ape: Vec::new(),
        probe_errors: Vec::new(),
        learner_probe_errors: Vec::new(),
    };
    if let Some(reference) = &opts.reference {
        r.ape = Some(ape_of_tables(&reference.q_star, q_it, reference.tol)?);
        r.learner_ape = tables
            .iter()
            .map(|q| ape_of_tables(&reference.q_star, q, reference.tol))
            .collect::<Result<_>>()?;
        let star = &reference.q_star;
        r.probe_errors = opts.probes.iter().map(|&(s, a)| q_it.get(s, a) - star.get(s, a)).collect();
        r.learner_probe_errors = tables
            .iter()
            .flat_map(|q| opts.probes.iter().map(move |&(s, a)| q.get(s, a) - star.get(s, a)))
            .collect();
    }
    Ok(r)
}
