use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use viact_core::data::Clip;
use viact_core::model::{class_token_attention, min_max_normalize, TokenSource, ViAct};
use viact_core::nn::Ctx;
use viact_core::tokenizer::PosEmbedding;
use viact_core::train::clip_batch;
use viact_core::Tape;

use super::pretrain::{model_config, token_centers};
use crate::common::{load_checkpoint, Jsonl, Sidecar};
use crate::config::{write_snapshot, Global};
use crate::render::{dot, gray_image, save, viridis};

#[derive(Debug, Clone, Serialize, Deserialize, Args)]
pub struct AttendArgs {
    /// Classifier checkpoint; omit for a freshly initialised model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Clip file (`.vclp`).
    #[arg(long)]
    pub clip: PathBuf,
    /// Attention head of the last frame-encoder block.
    #[arg(long, default_value_t = 0)]
    pub head: usize,
    /// Pixel upscaling of the rendered frames.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
}

/// Scores of one frame, one entry per token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameScores {
    pub frame: usize,
    pub head: usize,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn run(global: &Global, args: &AttendArgs) -> Result<Vec<FrameScores>> {
    let clip =
        Clip::load(&args.clip).with_context(|| format!("loading {}", args.clip.display()))?;
    let (model, store, source) = match &args.checkpoint {
        Some(path) => {
            let (ckpt, side) = load_checkpoint(path)?;
            if side.graph != Sidecar::CLASSIFIER {
                bail!("{} is not a classifier checkpoint", path.display());
            }
            let (model, mut store) = ViAct::new::<f32>(side.model, 0)?;
            ckpt.load_into(&mut store, true)?;
            (model, store, side.source)
        }
        None => {
            let (model, store) = ViAct::new::<f32>(
                model_config(clip.num_frames(), PosEmbedding::PointLinear),
                global.seed,
            )?;
            (model, store, TokenSource::Anatomical)
        }
    };
    let t = model.cfg.frames;
    if clip.num_frames() < t {
        bail!("clip has {} frames, the model needs {t}", clip.num_frames());
    }
    if args.head >= model.cfg.heads {
        bail!(
            "--head {} out of range (model has {} heads)",
            args.head,
            model.cfg.heads
        );
    }
    let clip = clip.truncated(t)?;
    let batch = clip_batch::<f32>(&[&clip], t)?;
    let tape = Tape::inference();
    let cx = Ctx::eval(&tape, &store);
    let points = match source {
        TokenSource::Anatomical => Some(tape.constant(batch.points)),
        TokenSource::Grid => None,
    };
    let out = model.forward(&cx, source, tape.constant(batch.frames), points, true)?;
    let attn = out
        .frame_attention
        .context("encoder returned no attention")?;
    let rows = class_token_attention(&attn, args.head)?;

    let dir = &global.out_dir;
    write_snapshot(dir, global, "attend", args)?;
    let mut sink = Jsonl::create(&dir.join("scores.jsonl"))?;
    let scale = args.scale.max(1);
    let mut all = Vec::with_capacity(t);
    for (f, raw) in rows.into_iter().enumerate() {
        let normalized = min_max_normalize(&raw);
        let frame: Vec<Option<f32>> = clip.frame(f).iter().map(|&v| Some(v)).collect();
        let mut img = gray_image(&frame, clip.height, clip.width, scale);
        let centers = token_centers(&clip, f, source, model.cfg.patch_size)?;
        for (c, s) in centers.iter().zip(&normalized) {
            let (x, y) = ((c[0] + 0.5) * scale as f64, (c[1] + 0.5) * scale as f64);
            dot(&mut img, x, y, 0.4 * scale as f64 + 0.5, viridis(*s));
        }
        save(&img, &dir.join(format!("frame_{f:03}.png")))?;
        let scores = FrameScores {
            frame: f,
            head: args.head,
            raw,
            normalized,
        };
        sink.write(&scores)?;
        all.push(scores);
    }
    println!("wrote {} frames to {}", all.len(), dir.display());
    Ok(all)
}
