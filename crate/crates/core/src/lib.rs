//! Levelwise hierarchical reinforcement learning with a diversity-driven
//! intrinsic reward.
//!
//! Every level of the hierarchy owns a policy conditioned on the action of
//! the level above, and every level above the bottom owns an action-conditioned
//! predictor. The predictor's guesses about what the *other* actions would
//! have led to are compared against what really happened; the lower level is
//! rewarded for producing outcomes that are far from those alternatives.

pub mod approx;
pub mod baselines;
pub mod config;
pub mod envs;
pub mod error;
pub mod hierarchy;
pub mod metrics;
pub mod ppo;
pub mod runner;
pub mod seeding;

pub use error::{Error, Result};
