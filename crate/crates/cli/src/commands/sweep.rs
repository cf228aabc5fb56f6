use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use viact_core::data::Dataset;
use viact_core::model::TokenSource;
use viact_core::tokenizer::PosEmbedding;
use viact_core::train::MeanStd;

use super::finetune::{finetune_runs, FinetuneArgs, Init};
use super::pretrain::{train_mae, PretrainArgs};
use crate::common::{load_splits, Jsonl};
use crate::config::{write_snapshot, Global};

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct SweepArgs {
    /// `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0.75")]
    pub mask_ratios: String,
    #[arg(long, value_delimiter = ',', default_value = "point_linear")]
    pub pos_embeddings: Vec<PosEmbedding>,
    #[arg(long, default_value = "anatomical")]
    pub tokenizer: TokenSource,
    /// Fine-tuning seeds per grid point.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Skip the no-pre-training rows.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long, default_value_t = 10)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub pretrain_batch: usize,
    #[arg(long, default_value_t = 1.5e-3)]
    pub pretrain_base_lr: f64,
    #[arg(long, default_value_t = 1)]
    pub pretrain_warmup: usize,
    #[arg(long, default_value_t = 15)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub finetune_batch: usize,
    #[arg(long, default_value_t = 1.6e-2)]
    pub finetune_base_lr: f64,
    #[arg(long, default_value_t = 8)]
    pub patience: usize,
}

/// Parses `a:b:s` (inclusive of `b`) or `a,b,c`.
pub fn parse_ratios(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let ratios: Vec<f64> = if let Some((a, rest)) = spec.split_once(':') {
        let (b, s) = rest
            .split_once(':')
            .with_context(|| format!("range `{spec}` must be start:stop:step"))?;
        let (a, b, s): (f64, f64, f64) = (a.trim().parse()?, b.trim().parse()?, s.trim().parse()?);
        if !(s > 0.0) || b < a {
            bail!("range `{spec}` needs step > 0 and stop ≥ start");
        }
        let n = ((b - a) / s + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((a + i as f64 * s) * 1e6).round() / 1e6)
            .collect()
    } else {
        spec.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad ratio `{v}`"))
            })
            .collect::<Result<_>>()?
    };
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        bail!("mask ratio {r} must lie in (0, 1)");
    }
    Ok(ratios)
}

/// One row of `results.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub checksum: String,
    pub variant: PosEmbedding,
    /// `none` or `<tokenizer> mae`.
    pub pretraining: String,
    pub mask_ratio: Option<f64>,
    pub accuracy: MeanStd,
    pub weighted_f1: MeanStd,
    pub accuracies: Vec<f64>,
    pub weighted_f1s: Vec<f64>,
}

/// Everything a grid point's result depends on.
#[derive(Serialize)]
struct PointKey<'a> {
    seed: u64,
    manifest_sha256: &'a str,
    variant: PosEmbedding,
    mask_ratio: Option<f64>,
    pretrain: Option<&'a PretrainArgs>,
    finetune: &'a FinetuneArgs,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad row in {}", path.display())))
        .collect()
}

fn write_tsv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from(
        "variant\tpretraining\tmask_ratio\taccuracy_mean\taccuracy_std\tweighted_f1_mean\tweighted_f1_std\trepeats\n",
    );
    for r in rows {
        let ratio = r.mask_ratio.map_or("-".to_string(), |m| format!("{m}"));
        writeln!(
            s,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            r.variant,
            r.pretraining,
            ratio,
            r.accuracy.mean,
            r.accuracy.std,
            r.weighted_f1.mean,
            r.weighted_f1.std,
            r.accuracy.n
        )?;
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn run(global: &Global, args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let ratios = parse_ratios(&args.mask_ratios)?;
    if args.pos_embeddings.is_empty() {
        bail!("--pos-embeddings is empty");
    }
    let [train, val, test] = load_splits(&global.data_root)?;
    let manifest = sha256_hex(&fs::read(global.data_root.join(Dataset::MANIFEST))?);
    let out = &global.out_dir;
    write_snapshot(out, global, "sweep", args)?;
    let results = out.join("results.jsonl");
    let done: BTreeSet<String> = read_rows(&results)?
        .into_iter()
        .map(|r| r.checksum)
        .collect();
    let mut sink = Jsonl::append(&results)?;

    let ft = FinetuneArgs {
        tokenizer: args.tokenizer,
        pos_embedding: args.pos_embeddings[0],
        pretrained: None,
        repeats: args.repeats,
        epochs: args.finetune_epochs,
        batch: args.finetune_batch,
        base_lr: args.finetune_base_lr,
        patience: args.patience,
    };
    let mut points: Vec<(PosEmbedding, Option<f64>)> = Vec::new();
    for &pos in &args.pos_embeddings {
        if !args.no_baseline {
            points.push((pos, None));
        }
        points.extend(ratios.iter().map(|&r| (pos, Some(r))));
    }
    for (pos, ratio) in points {
        let pre = ratio.map(|mask_ratio| PretrainArgs {
            tokenizer: args.tokenizer,
            mask_ratio,
            pos_embedding: pos,
            epochs: args.pretrain_epochs,
            batch: args.pretrain_batch,
            base_lr: args.pretrain_base_lr,
            warmup: args.pretrain_warmup,
            recon_frames: 0,
        });
        let ft = FinetuneArgs {
            pos_embedding: pos,
            ..ft.clone()
        };
        let key = PointKey {
            seed: global.seed,
            manifest_sha256: &manifest,
            variant: pos,
            mask_ratio: ratio,
            pretrain: pre.as_ref(),
            finetune: &ft,
        };
        let checksum = sha256_hex(serde_json::to_string(&key)?.as_bytes());
        let label = match ratio {
            Some(r) => format!("{pos} mask {r}"),
            None => format!("{pos} no pre-training"),
        };
        if done.contains(&checksum) {
            println!("skip {label} (done)");
            continue;
        }
        println!("run  {label}");
        let dir = out.join("points").join(&checksum[..16]);
        let init = match &pre {
            Some(p) => {
                let (_, store, _) = train_mae(global, p, &train, &dir, true)?;
                Some(Init {
                    model: super::pretrain::model_config(train[0].num_frames(), pos),
                    store,
                })
            }
            None => None,
        };
        let rep = finetune_runs(
            global,
            &ft,
            [&train, &val, &test],
            init.as_ref(),
            None,
            true,
        )?;
        let row = SweepRow {
            checksum,
            variant: pos,
            pretraining: match ratio {
                Some(_) => format!("{} mae", args.tokenizer),
                None => "none".into(),
            },
            mask_ratio: ratio,
            accuracy: rep.accuracy,
            weighted_f1: rep.weighted_f1,
            accuracies: rep.accuracies(),
            weighted_f1s: rep.runs.iter().map(|r| r.weighted_f1).collect(),
        };
        println!(
            "     accuracy {}, weighted F1 {}",
            row.accuracy, row.weighted_f1
        );
        sink.write(&row)?;
    }
    let rows = read_rows(&results)?;
    write_tsv(&out.join("results.tsv"), &rows)?;
    Ok(rows)
}
