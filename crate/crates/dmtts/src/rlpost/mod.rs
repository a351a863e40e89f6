//! Hierarchical reinforcement post-training. The transformer (primary
//! level) is rewarded for dialect fidelity through the ASR oracle; a small
//! controller (high level) owning spontaneous-token biases and the
//! sampling temperature is rewarded for hitting a target rate of filled
//! pauses and prolongations. The two levels alternate inside each round,
//! tethered to the supervised checkpoint by a KL penalty and ceiling.

pub mod policy;
pub mod rollout;
pub mod update;

pub use policy::{policy_logprobs, ControllerParams, RlConfig};
pub use rollout::{reward_expressive, reward_primary, rollout, spontaneous_rate, Rollout};
pub use update::{
    collect_rollouts, hierarchical_rl, high_level_update, mean_rewards,
    primary_policy_update, write_reward_curve, RlOutcome, RoundLog,
};
