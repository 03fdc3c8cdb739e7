//! Multi-timescale ensemble Q-learning for tabular MDPs.
//!
//! The crate estimates a transition model from a black-box environment,
//! synthesizes n-hop environments from matrix powers of the estimate, runs
//! parallel Q-learners fused by Jensen-Shannon weights, and checks the
//! learned quantities against exact dynamic-programming oracles.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod estimation;
pub mod mdp;
pub mod plots;
pub mod metrics;
pub mod rng;
pub mod tensor_io;

pub use error::{Error, Result};
