use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use viact_core::data::Clip;
use viact_core::desk::Desk;
use viact_core::geometry::{extract_patch, sampling_grid};
use viact_core::mae::{make_mask, masked_count, Mae, MaeConfig};
use viact_core::model::{ModelConfig, TokenSource};
use viact_core::nn::Ctx;
use viact_core::seed::derive_seed;
use viact_core::tokenizer::{grid_points, PosEmbedding};
use viact_core::train::{pretrain, EpochLog, FrameSet, OptimConfig, PretrainConfig};
use viact_core::{ParamStore, Tape, Tensor};

use crate::common::{clip_len, load_splits, save_checkpoint, write_json, Jsonl, Sidecar};
use crate::config::{write_snapshot, Global};
use crate::render::{gray_image, hstack, save, vstack};

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct PretrainArgs {
    /// Token source: `anatomical` or `grid`.
    #[arg(long, default_value = "anatomical")]
    pub tokenizer: TokenSource,
    #[arg(long, default_value_t = 0.75)]
    pub mask_ratio: f64,
    #[arg(long, default_value = "point_linear")]
    pub pos_embedding: PosEmbedding,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Learning rate before the batch/256 scaling.
    #[arg(long, default_value_t = 1.5e-3)]
    pub base_lr: f64,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Frames shown in `recon.png`.
    #[arg(long, default_value_t = 4)]
    pub recon_frames: usize,
}

impl Default for PretrainArgs {
    fn default() -> Self {
        let d = Desk::default();
        Self {
            tokenizer: TokenSource::Anatomical,
            mask_ratio: 0.75,
            pos_embedding: PosEmbedding::PointLinear,
            epochs: d.pretrain_epochs,
            batch: d.pretrain_batch,
            base_lr: d.pretrain_base_lr,
            warmup: d.pretrain_warmup,
            recon_frames: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub tokenizer: TokenSource,
    pub pos_embedding: PosEmbedding,
    pub mask_ratio: f64,
    pub tokens_per_frame: usize,
    pub visible_tokens: usize,
    pub masked_tokens: usize,
    pub frames: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub parameters: usize,
    pub checkpoint: PathBuf,
}

pub fn model_config(frames: usize, pos: PosEmbedding) -> ModelConfig {
    ModelConfig {
        frames,
        pos_embedding: pos,
        ..Desk::default().model()
    }
}

/// Token centres of frame `t`: the clip's points or the patch grid.
pub fn token_centers(
    clip: &Clip,
    t: usize,
    source: TokenSource,
    j: usize,
) -> Result<Vec<[f64; 2]>> {
    let set = match source {
        TokenSource::Anatomical => clip.points.frames()[t].clone(),
        TokenSource::Grid => grid_points(clip.height, clip.width, j)?,
    };
    Ok(set
        .points()
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64])
        .collect())
}

/// Trains the MAE on the training frames of `clips` and writes the
/// checkpoint, log and report under `out`.
pub fn train_mae(
    global: &Global,
    args: &PretrainArgs,
    train: &[Clip],
    out: &std::path::Path,
    quiet: bool,
) -> Result<(Mae, ParamStore<f32>, PretrainReport)> {
    let model = model_config(clip_len(train)?, args.pos_embedding);
    let mae_cfg = MaeConfig {
        mask_ratio: args.mask_ratio,
        ..Desk::default().mae()
    };
    let first = &train[0];
    let tokens = token_centers(first, 0, args.tokenizer, model.patch_size)?.len();
    let masked = if args.mask_ratio > 0.0 && args.mask_ratio < 1.0 {
        masked_count(tokens, args.mask_ratio)
    } else {
        0
    };
    if masked == 0 || masked >= tokens {
        bail!(
            "mask ratio {} on {tokens} tokens leaves {masked} masked and {} visible",
            args.mask_ratio,
            tokens - masked.min(tokens)
        );
    }
    let (mae, mut store) = Mae::new::<f32>(model, mae_cfg, global.seed)?;
    let frames = FrameSet::new(train)?;
    let cfg = PretrainConfig {
        optim: OptimConfig {
            base_lr: args.base_lr,
            warmup_epochs: args.warmup,
            total_epochs: args.epochs,
            ..OptimConfig::pretrain(args.batch)
        },
        epochs: args.epochs,
        source: args.tokenizer,
        seed: global.seed,
    };
    let mut log = Jsonl::create(&out.join("log.jsonl"))?;
    let logs = pretrain(&mae, &mut store, &frames, &cfg, |l: &EpochLog, _| {
        if !quiet {
            println!(
                "pretrain epoch {:>3}  loss {:.5}  lr {:.3e}",
                l.epoch, l.loss, l.lr
            );
        }
        log.write(l)?;
        Ok(())
    })?;
    let ckpt = out.join("pretrain.ckpt");
    save_checkpoint(
        &ckpt,
        &store,
        &Sidecar {
            graph: Sidecar::PRETRAIN.into(),
            model,
            mae: Some(mae_cfg),
            source: args.tokenizer,
        },
    )?;
    let report = PretrainReport {
        tokenizer: args.tokenizer,
        pos_embedding: args.pos_embedding,
        mask_ratio: args.mask_ratio,
        tokens_per_frame: tokens,
        visible_tokens: tokens - masked,
        masked_tokens: masked,
        frames: frames.len(),
        epochs: logs.len(),
        final_loss: logs.last().map_or(f64::NAN, |l| l.loss),
        parameters: store.num_scalars(),
        checkpoint: ckpt,
    };
    write_json(&out.join("run.json"), &report)?;
    Ok((mae, store, report))
}

pub fn run(global: &Global, args: &PretrainArgs) -> Result<PretrainReport> {
    let [train, _, _] = load_splits(&global.data_root)?;
    let out = &global.out_dir;
    write_snapshot(out, global, "pretrain", args)?;
    let (mae, store, report) = train_mae(global, args, &train, out, false)?;
    println!(
        "{} tokens/frame, {} visible; final loss {:.5}",
        report.tokens_per_frame, report.visible_tokens, report.final_loss
    );
    if args.recon_frames > 0 {
        let rows = recon_rows(&mae, &store, &train, args, global.seed)?;
        save(&vstack(&rows, 4), &out.join("recon.png"))?;
    }
    Ok(report)
}

fn paint(
    canvas: &mut [Option<f32>],
    h: usize,
    w: usize,
    center: [f64; 2],
    j: usize,
    values: &[f32],
) {
    for (&v, [x, y]) in values.iter().zip(sampling_grid(center, j)) {
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
            canvas[yi as usize * w + xi as usize] = Some(v);
        }
    }
}

/// One row per frame: the frame, the visible patches, and the visible
/// patches with the masked ones filled in by the decoder.
pub fn recon_rows(
    mae: &Mae,
    store: &ParamStore<f32>,
    clips: &[Clip],
    args: &PretrainArgs,
    seed: u64,
) -> Result<Vec<RgbImage>> {
    const SCALE: usize = 4;
    let j = mae.model_cfg.patch_size;
    let n = args.recon_frames.min(clips.len());
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let clip = &clips[r * clips.len() / n];
        let t = r % clip.num_frames();
        let (h, w) = (clip.height, clip.width);
        let frame = clip.frame(t);
        let centers = token_centers(clip, t, args.tokenizer, j)?;
        let plan = make_mask(
            centers.len(),
            args.mask_ratio,
            derive_seed(seed, &[7, r as u64]),
        )?;

        let tape = Tape::inference();
        let cx = Ctx::eval(&tape, store);
        let pts: Vec<f32> = centers
            .iter()
            .flat_map(|c| [c[0] as f32, c[1] as f32])
            .collect();
        let points = match args.tokenizer {
            TokenSource::Anatomical => {
                Some(tape.constant(Tensor::new(&[1, centers.len(), 2], pts)?))
            }
            TokenSource::Grid => None,
        };
        let frames = tape.constant(Tensor::new(&[1, h, w], frame.to_vec())?);
        let out = mae.forward(
            &cx,
            args.tokenizer,
            frames,
            points,
            std::slice::from_ref(&plan),
        )?;
        let pred = out.prediction.value();
        let jj = j * j;

        let mut visible = vec![None; h * w];
        let mut filled = vec![None; h * w];
        let mut is_visible = vec![false; centers.len()];
        for &i in &plan.visible {
            is_visible[i] = true;
        }
        for (i, &c) in centers.iter().enumerate() {
            if is_visible[i] {
                let patch = extract_patch(frame, h, w, c, j);
                paint(&mut visible, h, w, c, j, &patch.values);
                paint(&mut filled, h, w, c, j, &patch.values);
            } else {
                paint(&mut filled, h, w, c, j, &pred.data()[i * jj..(i + 1) * jj]);
            }
        }
        let original: Vec<Option<f32>> = frame.iter().map(|&v| Some(v)).collect();
        rows.push(hstack(
            &[
                gray_image(&original, h, w, SCALE),
                gray_image(&visible, h, w, SCALE),
                gray_image(&filled, h, w, SCALE),
            ],
            4,
        ));
    }
    Ok(rows)
}
