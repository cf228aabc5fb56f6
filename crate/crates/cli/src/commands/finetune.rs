use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use viact_core::data::Clip;
use viact_core::desk::Desk;
use viact_core::mae::copy_encoder;
use viact_core::model::{ModelConfig, TokenSource, ViAct};
use viact_core::tokenizer::PosEmbedding;
use viact_core::train::{finetune, FinetuneConfig, MeanStd, OptimConfig};
use viact_core::ParamStore;

use super::pretrain::model_config;
use crate::common::{
    clip_len, load_checkpoint, load_splits, save_checkpoint, write_json, Jsonl, Sidecar,
};
use crate::config::{write_snapshot, Global};

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct FinetuneArgs {
    #[arg(long, default_value = "anatomical")]
    pub tokenizer: TokenSource,
    /// Ignored with --pretrained, which fixes the embedding.
    #[arg(long, default_value = "point_linear")]
    pub pos_embedding: PosEmbedding,
    /// Pre-training checkpoint whose frame encoder initialises every run.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Runs with seeds `seed, seed+1, …`.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Learning rate before the batch/256 scaling.
    #[arg(long, default_value_t = 1.6e-2)]
    pub base_lr: f64,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 8)]
    pub patience: usize,
}

impl Default for FinetuneArgs {
    fn default() -> Self {
        let d = Desk::default();
        Self {
            tokenizer: TokenSource::Anatomical,
            pos_embedding: PosEmbedding::PointLinear,
            pretrained: None,
            repeats: 5,
            epochs: d.finetune_epochs,
            batch: d.finetune_batch,
            base_lr: d.finetune_base_lr,
            patience: d.patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub tokenizer: TokenSource,
    pub pos_embedding: PosEmbedding,
    pub pretrained: bool,
    /// Split the reported metrics come from (`val` when test is empty).
    pub eval_split: String,
    pub accuracy: MeanStd,
    pub weighted_f1: MeanStd,
    pub runs: Vec<SeedReport>,
}

impl FinetuneReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }
}

/// Frame-encoder weights to start from and the model they imply.
pub struct Init {
    pub store: ParamStore<f32>,
    pub model: ModelConfig,
}

pub fn load_pretrained(path: &Path) -> Result<Init> {
    let (ckpt, side) = load_checkpoint(path)?;
    let mut store = ParamStore::new();
    for (name, value) in ckpt.params {
        store.insert(name, value, false);
    }
    Ok(Init {
        store,
        model: side.model,
    })
}

/// One fine-tuning run per seed. Writes `seed_<s>/{log.jsonl,best.ckpt,
/// metrics.json}` under `out` when given.
pub fn finetune_runs(
    global: &Global,
    args: &FinetuneArgs,
    splits: [&[Clip]; 3],
    init: Option<&Init>,
    out: Option<&Path>,
    quiet: bool,
) -> Result<FinetuneReport> {
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let frames = clip_len(splits[0])?;
    let model_cfg = match init {
        Some(i) => ModelConfig { frames, ..i.model },
        None => model_config(frames, args.pos_embedding),
    };
    let cfg = FinetuneConfig {
        optim: OptimConfig {
            base_lr: args.base_lr,
            total_epochs: args.epochs,
            ..OptimConfig::finetune(args.batch)
        },
        patience: args.patience,
        ..FinetuneConfig::new(args.batch, args.epochs, args.tokenizer, global.seed)
    };
    let eval_split = if splits[2].is_empty() { "val" } else { "test" };
    let mut runs = Vec::with_capacity(args.repeats);
    for r in 0..args.repeats {
        let seed = global.seed + r as u64;
        let (model, mut store) = ViAct::new::<f32>(model_cfg, seed)?;
        if let Some(i) = init {
            copy_encoder(&i.store, &mut store)?;
        }
        let dir = out.map(|o| o.join(format!("seed_{seed}")));
        let mut log = match &dir {
            Some(d) => Some(Jsonl::create(&d.join("log.jsonl"))?),
            None => None,
        };
        let run = FinetuneConfig {
            seed,
            ..cfg.clone()
        };
        let res = finetune(&model, store, splits, &run, |l| {
            if !quiet && l.split == "val" {
                println!(
                    "seed {seed} epoch {:>3}  val loss {:.4}  acc {:.4}",
                    l.epoch,
                    l.loss,
                    l.accuracy.unwrap_or(f64::NAN)
                );
            }
            if let Some(log) = log.as_mut() {
                log.write(l)?;
            }
            Ok(())
        })?;
        let checkpoint = match &dir {
            Some(d) => {
                let p = d.join("best.ckpt");
                save_checkpoint(
                    &p,
                    &res.store,
                    &Sidecar {
                        graph: Sidecar::CLASSIFIER.into(),
                        model: model_cfg,
                        mae: None,
                        source: args.tokenizer,
                    },
                )?;
                Some(p)
            }
            None => None,
        };
        let report = SeedReport {
            seed,
            best_epoch: res.best_epoch,
            best_val_loss: res.best_val_loss,
            epochs_run: res.epochs_run,
            loss: res.test.loss,
            accuracy: res.test.metrics.accuracy,
            weighted_f1: res.test.metrics.weighted_f1,
            checkpoint,
        };
        if let Some(d) = &dir {
            write_json(&d.join("metrics.json"), &report)?;
        }
        if !quiet {
            println!(
                "seed {seed}: best epoch {} → {eval_split} accuracy {:.4}, weighted F1 {:.4}",
                report.best_epoch, report.accuracy, report.weighted_f1
            );
        }
        runs.push(report);
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = runs.iter().map(|r| r.weighted_f1).collect();
    Ok(FinetuneReport {
        tokenizer: args.tokenizer,
        pos_embedding: model_cfg.pos_embedding,
        pretrained: init.is_some(),
        eval_split: eval_split.into(),
        accuracy: MeanStd::of(&acc),
        weighted_f1: MeanStd::of(&f1),
        runs,
    })
}

pub fn run(global: &Global, args: &FinetuneArgs) -> Result<FinetuneReport> {
    let [train, val, test] = load_splits(&global.data_root)?;
    let out = &global.out_dir;
    write_snapshot(out, global, "finetune", args)?;
    let init = args
        .pretrained
        .as_deref()
        .map(load_pretrained)
        .transpose()?;
    let report = finetune_runs(
        global,
        args,
        [&train, &val, &test],
        init.as_ref(),
        Some(out),
        false,
    )?;
    write_json(&out.join("metrics.json"), &report)?;
    println!(
        "{} accuracy {}, weighted F1 {} over {} seeds",
        report.eval_split,
        report.accuracy,
        report.weighted_f1,
        report.runs.len()
    );
    Ok(report)
}
