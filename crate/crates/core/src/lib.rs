//! Maintenance-planning toolkit for deteriorating water pipes.
//!
//! The crate provides a stochastic single-pipe deterioration simulator, a
//! small feed-forward Q-network trained either online (DQN with experience
//! replay and a target network) or offline (discrete conservative Q-learning
//! on a logged transition dataset), plus the baseline policies and the
//! evaluation harness used to compare rehabilitation plans.

pub mod baselines;
pub mod cql;
pub mod dataset;
pub mod dqn;
pub mod env;
pub mod eval;
pub mod nn;
pub mod seeding;

pub use env::{Action, EnvConfig, Material, PipeSpec, PipeState, StepOutcome};
pub use nn::{Activation, AdamState, MlpConfig, MlpParams};
