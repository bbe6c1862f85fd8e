//! Desk-scale training lab: a tabular softmax policy on [`ChainGym`] updated
//! with the clipped surrogate and the crate's grouped advantages.

mod chain;
mod compare;
mod policy;

pub use chain::{ChainAction, ChainGym, ChainState, PROBE_LIMIT, PROBE_REWARD, SOLVE_REWARD};
pub use compare::{
    compare_settings, evaluate, gaussian_smooth, train, EpochStats, EvalStats, LabConfig, LabReport, RunResult,
    SettingSummary,
};
pub use policy::{
    gradient, objective, sample_group, sample_trajectory, softmax, surrogate_slope, surrogate_term, to_rollout_group,
    update_policy, BatchToken, LabTrajectory, TabularPolicy, UpdateBatch, UpdateStats,
};

use crate::reward::RewardError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("group needs at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("clip epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("gradient is not finite; step aborted")]
    NonFiniteGradient,
    #[error("sweep needs at least one setting and one seed")]
    EmptySweep,
    #[error(transparent)]
    Reward(#[from] RewardError),
}
