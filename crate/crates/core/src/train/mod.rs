//! Optimisation: AdamW, learning-rate schedules, metrics, early stopping
//! and the pre-training / fine-tuning loops.

mod batch;
mod early_stop;
mod finetune;
mod metrics;
mod optim;
mod pretrain;
mod schedule;

use serde::{Deserialize, Serialize};

pub use batch::{clip_batch, ClipBatch, FrameSet};
pub use early_stop::{EarlyStop, StopDecision};
pub use finetune::{
    evaluate, finetune, finetune_seeds, Evaluation, FinetuneConfig, FinetuneResult, SeedSummary,
};
pub use metrics::{metrics, MeanStd, Metrics};
pub use optim::{adamw_scalar, AdamW, DecayReport};
pub use pretrain::{pretrain, PretrainConfig};
pub use schedule::{lr_at, lr_at_step, OptimConfig, Schedule};

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub lr: f64,
}
