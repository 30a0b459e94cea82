//! Offline reinforcement learning on finite MDPs with uncertainty-
//! calibrated conservatism: Dirichlet posteriors over transitions,
//! lower-confidence-bound pessimistic policy evaluation, KL-regularized
//! mirror-descent improvement, the behavior-cloning and fitted-Q
//! baselines, and a stochastic gridworld benchmark harness.

pub mod baselines;
pub mod critic;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gridworld;
pub mod mdp;
pub mod policy;
pub mod posterior;
pub mod verify;

pub use error::{BcpoError, Result};
