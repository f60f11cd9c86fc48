//! Group-relative policy optimization driven by the configured reward.

pub mod config;
pub mod eval;
pub mod objective;
pub mod optim;
pub mod rollout;
pub mod train;
pub mod warm_start;

pub use config::{RewardVariant, TrainerConfig, WarmStartConfig};
pub use eval::{evaluate, group_dump, rank_probe, EvalSummary};
pub use objective::{
    clipped_surrogate, effective_ratio, grpo_objective, grpo_objective_value, kl_estimate,
    ObjectiveStats,
};
pub use optim::{clip_grad_norm, cosine_lr, Adam, AdamSettings};
pub use rollout::{
    assign_advantages, collect_rollouts, group_rewards, Rollout, RolloutGroup, TrajectoryBatch,
};
pub use train::{
    adam_settings, apply_update, build_datasets, eval_seed, initial_policy, train, train_from,
    Collect, TrainOutcome, TrainSink, MAX_CONSECUTIVE_SKIPS,
};
pub use warm_start::warm_start;
