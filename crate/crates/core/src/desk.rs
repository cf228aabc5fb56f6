//! Desk-scale preset used by the CLI defaults and the synthetic learning
//! checks: 64 px clips of 8 frames and a two-block encoder.

use serde::{Deserialize, Serialize};

use crate::data::{synth_dataset, Clip, Split, SynthConfig};
use crate::error::Result;
use crate::mae::MaeConfig;
use crate::model::{ModelConfig, TokenSource};
use crate::train::{FinetuneConfig, OptimConfig, PretrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Desk {
    pub size: usize,
    pub frames: usize,
    /// Clips per split, `[train, val, test]`.
    pub counts: [usize; 3],
    pub signal: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_base_lr: f64,
    pub pretrain_warmup: usize,
    pub finetune_epochs: usize,
    pub finetune_batch: usize,
    pub finetune_base_lr: f64,
    pub patience: usize,
}

impl Default for Desk {
    fn default() -> Self {
        Self {
            size: 64,
            frames: 8,
            counts: [512, 128, 128],
            signal: 1.0,
            pretrain_epochs: 10,
            pretrain_batch: 64,
            pretrain_base_lr: 1.5e-3,
            pretrain_warmup: 1,
            finetune_epochs: 15,
            finetune_batch: 16,
            // effective 1e-3 at batch 16
            finetune_base_lr: 1.6e-2,
            patience: 8,
        }
    }
}

impl Desk {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            signal: self.signal,
            ..SynthConfig::new(self.size, self.frames)
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            frames: self.frames,
            ..ModelConfig::desk()
        }
    }

    pub fn mae(&self) -> MaeConfig {
        MaeConfig::desk()
    }

    pub fn pretrain(&self, source: TokenSource, seed: u64) -> PretrainConfig {
        PretrainConfig {
            optim: OptimConfig {
                base_lr: self.pretrain_base_lr,
                warmup_epochs: self.pretrain_warmup,
                total_epochs: self.pretrain_epochs,
                ..OptimConfig::pretrain(self.pretrain_batch)
            },
            epochs: self.pretrain_epochs,
            source,
            seed,
        }
    }

    pub fn finetune(&self, source: TokenSource, seed: u64) -> FinetuneConfig {
        let mut cfg = FinetuneConfig::new(self.finetune_batch, self.finetune_epochs, source, seed);
        cfg.optim.base_lr = self.finetune_base_lr;
        cfg.patience = self.patience;
        cfg
    }

    /// `[train, val, test]` clips of the synthetic cohort.
    pub fn dataset(&self, seed: u64) -> Result<[Vec<Clip>; 3]> {
        let mut out: [Vec<Clip>; 3] = Default::default();
        for (clip, split) in synth_dataset(self.counts, seed, &self.synth())? {
            let i = Split::ALL
                .iter()
                .position(|s| *s == split)
                .expect("known split");
            out[i].push(clip);
        }
        Ok(out)
    }
}
