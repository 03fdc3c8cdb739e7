//! Exact finite MDP structures and the dynamic-programming solvers used as
//! ground truth by the learners and the theory checks.
//!
//! Costs are minimized throughout. A transition tensor is stored as one dense
//! `|S| x |S|` matrix per action, row `s` holding the next-state distribution
//! of `(s, a)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-sum tolerance for freshly constructed tensors.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// Row-sum tolerance after repeated matrix products.
pub const POWER_TOL: f64 = 1e-6;
/// Residual accepted from exact policy evaluation, relative to `max(1, |Q|_inf)`.
pub const EVALUATION_TOL: f64 = 1e-8;
/// Largest state space evaluated with a dense direct solve.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountFactor(f64);

impl DiscountFactor {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 && gamma < 1.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::invalid("gamma", format!("{gamma} is outside (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One failing `(state, action)` row of a transition tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RowViolation {
    pub state: usize,
    pub action: usize,
    pub row_sum: f64,
    pub min_entry: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub rows_checked: usize,
    pub violations: Vec<RowViolation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every `(s, a)` row for nonnegativity and a unit row sum.
pub fn validate_ptt(matrices: &[DMatrix<f64>], tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (action, m) in matrices.iter().enumerate() {
        for state in 0..m.nrows() {
            report.rows_checked += 1;
            let row = m.row(state);
            let row_sum: f64 = row.iter().sum();
            let min_entry = row.iter().copied().fold(f64::INFINITY, f64::min);
            let finite = row.iter().all(|p| p.is_finite());
            if !finite || min_entry < 0.0 || (row_sum - 1.0).abs() > tol {
                report.violations.push(RowViolation {
                    state,
                    action,
                    row_sum,
                    min_entry,
                });
            }
        }
    }
    report
}

/// Probability transition tensor: per-action row-stochastic matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Ptt {
    matrices: Vec<DMatrix<f64>>,
}

impl Ptt {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::with_tolerance(matrices, STOCHASTIC_TOL)
    }

    pub fn with_tolerance(matrices: Vec<DMatrix<f64>>, tol: f64) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(Error::invalid("num_actions", "at least one action is required"));
        };
        let n = first.nrows();
        if n == 0 {
            return Err(Error::invalid("num_states", "at least one state is required"));
        }
        for (a, m) in matrices.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!(
                    "action {a} matrix is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let report = validate_ptt(&matrices, tol);
        if let Some(v) = report.violations.first() {
            return Err(Error::NotStochastic(format!(
                "{} bad rows, first at (s={}, a={}) with sum {} and min {}",
                report.violations.len(),
                v.state,
                v.action,
                v.row_sum,
                v.min_entry
            )));
        }
        Ok(Self { matrices })
    }

    /// Identity dynamics: every action keeps the chain where it is.
    pub fn identity(num_states: usize, num_actions: usize) -> Self {
        Self {
            matrices: vec![DMatrix::identity(num_states, num_states); num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.matrices.len()
    }

    /// `p_a(s, s')`.
    pub fn prob(&self, s: usize, next: usize, a: usize) -> f64 {
        self.matrices[a][(s, next)]
    }

    pub fn action(&self, a: usize) -> &DMatrix<f64> {
        &self.matrices[a]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn into_matrices(self) -> Vec<DMatrix<f64>> {
        self.matrices
    }

    /// State-to-state matrix obtained by following `policy`.
    pub fn under_policy(&self, policy: &Policy) -> DMatrix<f64> {
        let n = self.num_states();
        DMatrix::from_fn(n, n, |s, next| self.matrices[policy.action(s)][(s, next)])
    }
}

/// `P_a^n` for every action, by binary exponentiation.
pub fn matrix_power_ptt(ptt: &Ptt, n: usize) -> Result<Ptt> {
    if n == 0 {
        return Err(Error::invalid("order", "matrix power order must be at least 1"));
    }
    if n == 1 {
        return Ok(ptt.clone());
    }
    let matrices = ptt
        .matrices
        .iter()
        .map(|m| matrix_power(m, n))
        .collect::<Vec<_>>();
    Ptt::with_tolerance(matrices, POWER_TOL)
}

fn matrix_power(m: &DMatrix<f64>, mut n: usize) -> DMatrix<f64> {
    let mut base = m.clone();
    let mut acc: Option<DMatrix<f64>> = None;
    while n > 0 {
        if n & 1 == 1 {
            acc = Some(match acc {
                Some(a) => &a * &base,
                None => base.clone(),
            });
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    acc.expect("n >= 1")
}

/// Scales each row to sum to one. All-zero rows become uniform; their indices
/// are returned and logged.
pub fn row_normalize(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid("matrix", "entries must be finite and nonnegative"));
    }
    let cols = m.ncols();
    let mut out = m.clone();
    let mut zero_rows = Vec::new();
    for s in 0..m.nrows() {
        let sum: f64 = m.row(s).iter().sum();
        if sum > 0.0 {
            out.row_mut(s).iter_mut().for_each(|x| *x /= sum);
        } else {
            out.row_mut(s).fill(1.0 / cols as f64);
            zero_rows.push(s);
        }
    }
    if !zero_rows.is_empty() {
        log::warn!(
            "row_normalize: {} all-zero rows replaced by the uniform row (first: {})",
            zero_rows.len(),
            zero_rows[0]
        );
    }
    Ok((out, zero_rows))
}

/// Stage costs. `expected(s, a) = c_a(s)`; the optional per-transition costs
/// `transition[a][(s, s')]` are used by samplers when present.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    expected: DMatrix<f64>,
    transition: Option<Vec<DMatrix<f64>>>,
}

impl CostModel {
    pub fn from_expected(expected: DMatrix<f64>) -> Result<Self> {
        if expected.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("costs", "all costs must be finite"));
        }
        Ok(Self {
            expected,
            transition: None,
        })
    }

    /// Builds the expected costs as `sum_s' p_a(s, s') c_a(s, s')`.
    pub fn from_transition_costs(ptt: &Ptt, transition: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, k) = (ptt.num_states(), ptt.num_actions());
        if transition.len() != k || transition.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::Dimension("transition costs do not match the tensor".into()));
        }
        if transition.iter().flat_map(|m| m.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("costs", "all costs must be finite"));
        }
        let expected = DMatrix::from_fn(n, k, |s, a| {
            ptt.action(a)
                .row(s)
                .iter()
                .zip(transition[a].row(s).iter())
                .map(|(p, c)| p * c)
                .sum()
        });
        Ok(Self {
            expected,
            transition: Some(transition),
        })
    }

    /// Constant cost `c` for every `(s, a)`.
    pub fn uniform(num_states: usize, num_actions: usize, c: f64) -> Self {
        Self {
            expected: DMatrix::from_element(num_states, num_actions, c),
            transition: None,
        }
    }

    pub fn num_states(&self) -> usize {
        self.expected.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.expected.ncols()
    }

    pub fn expected(&self) -> &DMatrix<f64> {
        &self.expected
    }

    pub fn transition(&self) -> Option<&[DMatrix<f64>]> {
        self.transition.as_deref()
    }

    /// `c_a(s)`.
    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.expected[(s, a)]
    }

    /// Cost actually charged for `s -a-> next`.
    pub fn sample_cost(&self, s: usize, a: usize, next: usize) -> f64 {
        match &self.transition {
            Some(t) => t[a][(s, next)],
            None => self.expected[(s, a)],
        }
    }

    /// Cost vector `c_pi`.
    pub fn under_policy(&self, policy: &Policy) -> DVector<f64> {
        DVector::from_fn(self.num_states(), |s, _| self.expected[(s, policy.action(s))])
    }

    /// Expected costs with no transition-level detail; used by synthetic
    /// environments, whose stage cost depends on `(s, a)` only.
    pub fn expected_only(&self) -> Self {
        Self {
            expected: self.expected.clone(),
            transition: None,
        }
    }

    /// Adds `k` to every cost.
    pub fn shifted(&self, k: f64) -> Self {
        Self {
            expected: self.expected.add_scalar(k),
            transition: self
                .transition
                .as_ref()
                .map(|t| t.iter().map(|m| m.add_scalar(k)).collect()),
        }
    }

    fn check_dims(&self, ptt: &Ptt) -> Result<()> {
        if self.expected.shape() != (ptt.num_states(), ptt.num_actions()) {
            return Err(Error::Dimension(format!(
                "cost table is {:?}, tensor has {} states and {} actions",
                self.expected.shape(),
                ptt.num_states(),
                ptt.num_actions()
            )));
        }
        Ok(())
    }
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some((s, a)) = actions.iter().enumerate().find(|(_, a)| **a >= num_actions) {
            return Err(Error::invalid(
                "policy",
                format!("state {s} maps to action {a}, but only {num_actions} actions exist"),
            ));
        }
        Ok(Self(actions))
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        Self(vec![action; num_states])
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.len()
    }

    /// Every deterministic policy, in lexicographic order.
    pub fn enumerate(num_states: usize, num_actions: usize) -> impl Iterator<Item = Policy> {
        let total = (num_actions as u64).pow(num_states as u32);
        (0..total).map(move |mut code| {
            let mut actions = vec![0; num_states];
            for slot in actions.iter_mut() {
                *slot = (code % num_actions as u64) as usize;
                code /= num_actions as u64;
            }
            Policy(actions)
        })
    }
}

/// `|S| x |A|` action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(DMatrix<f64>);

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self(DMatrix::zeros(num_states, num_actions))
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        Self(values)
    }

    pub fn num_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.0[(s, a)] = value;
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.0.row(s).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    /// `min_a Q(s, a)`.
    pub fn min_value(&self, s: usize) -> f64 {
        self.0.row(s).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `argmin_a Q(s, a)`, lowest index on ties.
    pub fn argmin(&self, s: usize) -> usize {
        argmin(self.0.row(s).iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v < best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction(DVector<f64>);

impl ValueFunction {
    pub fn new(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `argmin_a Q(s, a)` per state, lowest action index on ties.
pub fn greedy_policy_from_q(q: &QTable) -> Policy {
    Policy((0..q.num_states()).map(|s| q.argmin(s)).collect())
}

/// `Q(s, a) = c_a(s) + gamma * sum_s' p_a(s, s') v(s')`.
pub fn q_from_values(ptt: &Ptt, costs: &CostModel, gamma: DiscountFactor, v: &DVector<f64>) -> QTable {
    let g = gamma.value();
    let mut q = costs.expected().clone();
    for a in 0..ptt.num_actions() {
        let pv = ptt.action(a) * v;
        for s in 0..ptt.num_states() {
            q[(s, a)] += g * pv[s];
        }
    }
    QTable(q)
}

/// Largest violation of the Bellman optimality equation at `v`.
pub fn bellman_residual(ptt: &Ptt, costs: &CostModel, gamma: DiscountFactor, v: &DVector<f64>) -> f64 {
    let q = q_from_values(ptt, costs, gamma, v);
    (0..ptt.num_states())
        .map(|s| (v[s] - q.min_value(s)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub q: QTable,
    pub iterations: usize,
    pub residual: f64,
}

/// Value iteration to a Bellman residual below `tol`.
pub fn value_iteration(
    ptt: &Ptt,
    costs: &CostModel,
    gamma: DiscountFactor,
    tol: f64,
    max_iters: usize,
) -> Result<Solution> {
    value_iteration_from(ptt, costs, gamma, tol, max_iters, None)
}

/// Value iteration warm-started from `initial` when given.
pub fn value_iteration_from(
    ptt: &Ptt,
    costs: &CostModel,
    gamma: DiscountFactor,
    tol: f64,
    max_iters: usize,
    initial: Option<&DVector<f64>>,
) -> Result<Solution> {
    costs.check_dims(ptt)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    let n = ptt.num_states();
    let mut v = match initial {
        Some(init) if init.len() == n => init.clone(),
        Some(_) => return Err(Error::Dimension("warm start has the wrong length".into())),
        None => DVector::zeros(n),
    };
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let q = q_from_values(ptt, costs, gamma, &v);
        let next = DVector::from_fn(n, |s, _| q.min_value(s));
        let step = (&next - &v).amax();
        v = next;
        // |T v' - v'| <= gamma |v' - v|
        residual = gamma.value() * step;
        if residual < tol {
            let residual = bellman_residual(ptt, costs, gamma, &v);
            if residual < tol {
                let q = q_from_values(ptt, costs, gamma, &v);
                return Ok(Solution {
                    policy: greedy_policy_from_q(&q),
                    values: ValueFunction(v),
                    q,
                    iterations: it,
                    residual,
                });
            }
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual,
    })
}

/// Solves `(I - gamma P_pi) v = c_pi` for the state values of `policy`.
pub fn policy_values(
    ptt: &Ptt,
    costs: &CostModel,
    gamma: DiscountFactor,
    policy: &Policy,
) -> Result<DVector<f64>> {
    costs.check_dims(ptt)?;
    if policy.num_states() != ptt.num_states() {
        return Err(Error::Dimension("policy does not cover the state space".into()));
    }
    let n = ptt.num_states();
    let g = gamma.value();
    let p_pi = ptt.under_policy(policy);
    let c_pi = costs.under_policy(policy);
    if n <= DIRECT_SOLVE_LIMIT {
        let system = DMatrix::identity(n, n) - &p_pi * g;
        system.lu().solve(&c_pi).ok_or(Error::Singular)
    } else {
        damped_fixed_point(&p_pi, &c_pi, g)
    }
}

fn damped_fixed_point(p_pi: &DMatrix<f64>, c_pi: &DVector<f64>, g: f64) -> Result<DVector<f64>> {
    const DAMPING: f64 = 0.5;
    let scale = c_pi.amax().max(1.0) / (1.0 - g);
    let mut v = DVector::zeros(c_pi.len());
    // contraction factor of the damped map is 1 - DAMPING (1 - g)
    let rate = 1.0 - DAMPING * (1.0 - g);
    let max_iters = ((EVALUATION_TOL * 1e-2).ln() / rate.ln()).ceil() as usize + 10;
    for _ in 0..max_iters {
        let target = c_pi + p_pi * &v * g;
        let step = (&target - &v).amax();
        v = &v * (1.0 - DAMPING) + target * DAMPING;
        if step < 1e-2 * EVALUATION_TOL * scale {
            return Ok(v);
        }
    }
    Ok(v)
}

/// Exact `Q_pi`: `Q_pi(s, a) = c_a(s) + gamma sum_s' p_a(s, s') Q_pi(s', pi(s'))`.
pub fn policy_q_evaluation(
    ptt: &Ptt,
    costs: &CostModel,
    gamma: DiscountFactor,
    policy: &Policy,
) -> Result<QTable> {
    let v = policy_values(ptt, costs, gamma, policy)?;
    let q = q_from_values(ptt, costs, gamma, &v);
    let residual = policy_residual(ptt, costs, gamma, policy, &q);
    let tolerance = EVALUATION_TOL * q.matrix().amax().max(1.0);
    if !(residual <= tolerance) {
        return Err(Error::EvaluationResidual { residual, tolerance });
    }
    Ok(q)
}

/// Largest violation of the policy Bellman equation by `q`.
pub fn policy_residual(
    ptt: &Ptt,
    costs: &CostModel,
    gamma: DiscountFactor,
    policy: &Policy,
    q: &QTable,
) -> f64 {
    let v = DVector::from_fn(ptt.num_states(), |s, _| q.get(s, policy.action(s)));
    let target = q_from_values(ptt, costs, gamma, &v);
    (target.matrix() - q.matrix()).amax()
}
