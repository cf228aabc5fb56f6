use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warm-up then cosine decay to zero.
    WarmupCosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub schedule: Schedule,
    /// Interpolate the warm-up/cosine curve within an epoch.
    pub per_step: bool,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl OptimConfig {
    pub fn pretrain(batch_size: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            base_lr: 1.5e-4,
            batch_size,
            warmup_epochs: 200,
            total_epochs: 2000,
            schedule: Schedule::WarmupCosine,
            per_step: false,
            grad_clip: None,
        }
    }

    pub fn finetune(batch_size: usize) -> Self {
        Self {
            base_lr: 1e-3,
            schedule: Schedule::Constant,
            ..Self::pretrain(batch_size)
        }
    }

    /// `base_lr · batch_size / 256`.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / 256.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_epochs == 0 {
            return Err(Error::config("batch size and epoch count must be positive"));
        }
        if self.schedule == Schedule::WarmupCosine && self.warmup_epochs >= self.total_epochs {
            return Err(Error::config(format!(
                "warm-up ({}) must be shorter than training ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn curve(e: f64, cfg: &OptimConfig) -> f64 {
    let lr = cfg.effective_lr();
    match cfg.schedule {
        Schedule::Constant => lr,
        Schedule::WarmupCosine => {
            let w = cfg.warmup_epochs as f64;
            if e < w {
                lr * (e + 1.0) / w
            } else {
                let span = (cfg.total_epochs - cfg.warmup_epochs) as f64;
                lr * 0.5 * (1.0 + (PI * (e - w) / span).cos())
            }
        }
    }
}

/// Learning rate for a whole epoch.
pub fn lr_at(epoch: usize, cfg: &OptimConfig) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::config(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.total_epochs
        )));
    }
    Ok(curve(epoch as f64, cfg))
}

/// Learning rate at `step` of `steps` within `epoch`. Equals [`lr_at`] unless
/// `cfg.per_step` is set.
pub fn lr_at_step(epoch: usize, step: usize, steps: usize, cfg: &OptimConfig) -> Result<f64> {
    if !cfg.per_step || steps == 0 {
        return lr_at(epoch, cfg);
    }
    if epoch >= cfg.total_epochs || step >= steps {
        return Err(Error::config(format!(
            "step {step}/{steps} of epoch {epoch} outside schedule"
        )));
    }
    let frac = step as f64 / steps as f64;
    let e = epoch as f64 + frac;
    if cfg.schedule == Schedule::WarmupCosine && epoch < cfg.warmup_epochs {
        // rises to eff_lr at the first post-warm-up step
        let lr = cfg.effective_lr();
        return Ok(lr * (e + 1.0 / steps as f64) / cfg.warmup_epochs as f64);
    }
    Ok(curve(e, cfg))
}
