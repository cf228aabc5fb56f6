use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use viact_core::data::Split;
use viact_core::model::ViAct;
use viact_core::train::evaluate;

use crate::common::{load_checkpoint, load_splits, write_json, Sidecar};
use crate::config::{write_snapshot, Global};

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct EvalArgs {
    /// Classifier checkpoint written by `finetune`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub split: Split,
    pub clips: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

pub fn run(global: &Global, args: &EvalArgs) -> Result<EvalReport> {
    let (ckpt, side) = load_checkpoint(&args.checkpoint)?;
    if side.graph != Sidecar::CLASSIFIER {
        bail!(
            "{} is not a classifier checkpoint",
            args.checkpoint.display()
        );
    }
    let (model, mut store) = ViAct::new::<f32>(side.model, 0)?;
    ckpt.load_into(&mut store, true)?;
    let splits = load_splits(&global.data_root)?;
    let idx = Split::ALL
        .iter()
        .position(|s| *s == args.split)
        .expect("known split");
    let clips = &splits[idx];
    let ev = evaluate(&model, &store, clips, side.source, 32)?;
    let report = EvalReport {
        checkpoint: args.checkpoint.clone(),
        split: args.split,
        clips: clips.len(),
        loss: ev.loss,
        accuracy: ev.metrics.accuracy,
        weighted_f1: ev.metrics.weighted_f1,
    };
    write_snapshot(&global.out_dir, global, "eval", args)?;
    write_json(
        &global.out_dir.join(format!("eval_{}.json", args.split)),
        &report,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report)
}
