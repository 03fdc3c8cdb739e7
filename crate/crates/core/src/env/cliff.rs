use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::TabularEnvironment;
use crate::error::{Error, Result};
use crate::mdp::{CostModel, Ptt};

pub const CLIFF_COST: f64 = 1.0;
pub const GOAL_COST: f64 = -1.0;
pub const STEP_COST: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliffMove {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl CliffMove {
    pub const ALL: [CliffMove; 4] = [CliffMove::Up, CliffMove::Down, CliffMove::Left, CliffMove::Right];
}

/// Grid world with a cliff along the bottom edge. Cells are numbered
/// row-major from the top-left corner. Start is the bottom-left cell, the goal
/// is the bottom-right cell and the cliff is every bottom cell in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliffWalkSpec {
    pub rows: usize,
    /// Defaults to `3 * rows`.
    #[serde(default)]
    pub cols: Option<usize>,
}

impl CliffWalkSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols: Some(cols) }
    }

    pub fn cols(&self) -> usize {
        self.cols.unwrap_or(3 * self.rows)
    }

    pub fn num_states(&self) -> usize {
        self.rows * self.cols()
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.cols() + col
    }

    pub fn start(&self) -> usize {
        self.cell(self.rows - 1, 0)
    }

    pub fn goal(&self) -> usize {
        self.cell(self.rows - 1, self.cols() - 1)
    }

    pub fn is_cliff(&self, state: usize) -> bool {
        let (row, col) = (state / self.cols(), state % self.cols());
        row == self.rows - 1 && col > 0 && col < self.cols() - 1
    }

    /// Destination and cost of `mv` from `state`.
    pub fn transition(&self, state: usize, mv: CliffMove) -> (usize, f64) {
        if state == self.goal() {
            // the episode restarts
            return (self.start(), STEP_COST);
        }
        let cols = self.cols();
        let (row, col) = (state / cols, state % cols);
        let target = match mv {
            CliffMove::Up if row > 0 => self.cell(row - 1, col),
            CliffMove::Down if row + 1 < self.rows => self.cell(row + 1, col),
            CliffMove::Left if col > 0 => self.cell(row, col - 1),
            CliffMove::Right if col + 1 < cols => self.cell(row, col + 1),
            _ => state,
        };
        if self.is_cliff(target) && target != state {
            (self.start(), CLIFF_COST)
        } else if target == self.goal() {
            (target, GOAL_COST)
        } else {
            (target, STEP_COST)
        }
    }
}

/// Deterministic grid dynamics; walls keep the agent in place. Entering the
/// cliff costs 1 and returns the agent to the start, entering the goal costs
/// -1, any other move costs 0.01. Any action from the goal restarts at the
/// start cell.
pub fn build_cliffwalk_env(spec: &CliffWalkSpec) -> Result<TabularEnvironment> {
    if spec.rows < 2 || spec.cols() < 2 {
        return Err(Error::invalid("rows", "the cliff grid needs at least 2 rows and 2 columns"));
    }
    let n = spec.num_states();
    let mut matrices = Vec::with_capacity(4);
    let mut costs = Vec::with_capacity(4);
    for mv in CliffMove::ALL {
        let mut p = DMatrix::zeros(n, n);
        let mut c = DMatrix::zeros(n, n);
        for s in 0..n {
            let (next, cost) = spec.transition(s, mv);
            p[(s, next)] = 1.0;
            c[(s, next)] = cost;
        }
        matrices.push(p);
        costs.push(c);
    }
    let ptt = Ptt::new(matrices)?;
    let costs = CostModel::from_transition_costs(&ptt, costs)?;
    TabularEnvironment::new(ptt, costs, 0, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{value_iteration, DiscountFactor};

    #[test]
    fn grid_size_is_rows_times_cols() {
        let env = build_cliffwalk_env(&CliffWalkSpec::new(4, 12)).unwrap();
        assert_eq!(env.num_states(), 48);
        assert_eq!(CliffWalkSpec { rows: 20, cols: None }.num_states(), 1200);
    }

    #[test]
    fn wall_moves_stay_in_place() {
        let spec = CliffWalkSpec::new(4, 12);
        let corner = spec.cell(0, 0);
        assert_eq!(spec.transition(corner, CliffMove::Up), (corner, STEP_COST));
        assert_eq!(spec.transition(corner, CliffMove::Left), (corner, STEP_COST));
        assert_eq!(spec.transition(spec.start(), CliffMove::Down), (spec.start(), STEP_COST));
    }

    #[test]
    fn cliff_and_goal_costs() {
        let spec = CliffWalkSpec::new(4, 12);
        assert_eq!(spec.transition(spec.start(), CliffMove::Right), (spec.start(), CLIFF_COST));
        let above_goal = spec.cell(2, 11);
        assert_eq!(spec.transition(above_goal, CliffMove::Down), (spec.goal(), GOAL_COST));
    }

    #[test]
    fn cost_values_are_exactly_the_three_levels() {
        let env = build_cliffwalk_env(&CliffWalkSpec::new(3, 5)).unwrap();
        let mut seen: Vec<f64> = env.costs().expected().iter().copied().collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen, vec![GOAL_COST, STEP_COST, CLIFF_COST]);
    }

    #[test]
    fn optimal_policy_walks_the_rim() {
        let spec = CliffWalkSpec::new(4, 12);
        let env = build_cliffwalk_env(&spec).unwrap();
        let g = DiscountFactor::new(0.95).unwrap();
        let sol = value_iteration(env.ptt(), env.costs(), g, 1e-10, 10_000).unwrap();
        let mut path = vec![spec.start()];
        let mut s = spec.start();
        while s != spec.goal() && path.len() < 50 {
            s = spec.transition(s, CliffMove::ALL[sol.policy.action(s)]).0;
            path.push(s);
        }
        let mut expected = vec![spec.start()];
        expected.extend((0..12).map(|col| spec.cell(2, col)));
        expected.push(spec.goal());
        assert_eq!(path, expected);
    }
}
