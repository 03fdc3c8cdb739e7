//! Ensemble Q-learning over multi-timescale environments, the plain
//! Q-learning baseline and the value-iteration ensemble.

mod learner;
mod neql;
mod schedule;
mod vi;
mod weighting;

pub use learner::{epsilon_greedy_action, q_update, LearnerState, Transition};
pub use neql::{run_neql, run_neql_on, run_simple_q, Reference, RunOptions, RunOutput, Termination};
pub use schedule::{ScheduleSet, UpdateRatio};
pub use vi::{run_vi_ensemble, ViEnsemble, ViRunOutput, REBUILD_EVERY};
pub use weighting::{
    ajsd, compute_weights, ensemble_update, jsd, probability_table, q_to_probabilities, softmax, weight_bounds,
    WeightTracker,
};
