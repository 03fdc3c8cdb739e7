use rand::Rng;

use crate::env::TabularEnvironment;
use crate::mdp::QTable;
use crate::rng::Stream;

/// `q(s, a) <- (1 - alpha) q(s, a) + alpha (c + gamma min_a' q(s', a'))`.
pub fn q_update(q: &mut QTable, s: usize, a: usize, next: usize, cost: f64, alpha: f64, gamma: f64) {
    let target = cost + gamma * q.min_value(next);
    let old = q.get(s, a);
    q.set(s, a, (1.0 - alpha) * old + alpha * target);
}

/// Uniform action with probability `epsilon`, otherwise the lowest-index
/// minimizer of `q(s, .)`.
pub fn epsilon_greedy_action(q: &QTable, s: usize, epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.num_actions())
    } else {
        q.argmin(s)
    }
}

/// One Q-learner bound to its environment and private random stream.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub env: TabularEnvironment,
    pub q: QTable,
    pub rng: Stream,
    pub state: usize,
}

/// What one learner did in a single time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next: usize,
    pub cost: f64,
}

impl LearnerState {
    pub fn new(env: TabularEnvironment, rng: Stream) -> Self {
        let q = QTable::zeros(env.num_states(), env.num_actions());
        Self { env, q, rng, state: 0 }
    }

    pub fn step(&mut self, epsilon: f64, alpha: f64, gamma: f64) -> Transition {
        let s = self.state;
        let a = epsilon_greedy_action(&self.q, s, epsilon, &mut self.rng);
        let (next, cost) = self.env.step(s, a, &mut self.rng);
        q_update(&mut self.q, s, a, next, cost, alpha, gamma);
        self.state = next;
        Transition {
            state: s,
            action: a,
            next,
            cost,
        }
    }
}
