//! Optimization: Adam with linear warmup, staged training loops, and
//! loss-curve output.

pub mod optimizer;
pub mod stage;

pub use optimizer::{lr_at, optimizer_step, AdamConfig, OptimizerState};
pub use stage::{
    default_stage_config, sample_batch, speaker_finetune, train_stage, write_loss_curve, Stage,
    StageConfig,
};
