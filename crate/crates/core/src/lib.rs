//! Probabilistic uncertain reward models.
//!
//! Rewards are Gaussian distributions learned from pairwise preferences; the
//! overlap between reward distributions gives a per-sample uncertainty that
//! penalizes the reward during policy optimization.

pub mod dist_math;
pub mod error;

pub use dist_math::{GaussianReward, LossVariant, PairStatistic};
pub use error::{Error, Result};
pub mod reward_models;
pub mod rl;
pub mod seeding;
pub mod studies;
pub mod synth_data;
pub mod training;
pub mod uncertainty;
