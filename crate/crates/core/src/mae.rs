//! Anatomical masked-autoencoder pre-training of the frame encoder.
//!
//! A random subset of point tokens is hidden. The encoder sees only the
//! visible tokens; its outputs are padded with a learned mask token back to
//! the original `N` slots, every slot gets a point positional embedding,
//! and a small decoder reconstructs the hidden patches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameEncoder, ModelConfig, TokenSource, ViAct};
use crate::nn::{Ctx, Encoder, Linear};
use crate::seed::derive_seed;
use crate::tensor::{ParamBuilder, ParamId, ParamStore, Scalar, Var, INIT_STD};
use crate::tokenizer::PointEmbedding;

/// Partition of the `N` token indices of one frame. Both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub seed: u64,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ratio(&self) -> f64 {
        self.masked.len() as f64 / self.len() as f64
    }
}

/// Number of masked tokens for `n` tokens at `ratio`.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round() as usize
}

/// Uniformly random masking of `round(ratio·n)` of `n` tokens.
pub fn make_mask(n: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!(
            "mask ratio {ratio} must lie in (0, 1)"
        )));
    }
    let m = masked_count(n, ratio);
    if m == 0 || m >= n {
        return Err(Error::config(format!(
            "mask ratio {ratio} on {n} tokens leaves {m} masked and {} visible",
            n.saturating_sub(m)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut masked = order[..m].to_vec();
    let mut visible = order[m..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPlan {
        visible,
        masked,
        seed,
    })
}

/// Mask seed for one frame, keyed so that evaluation order cannot change it.
pub fn mask_seed(base: u64, epoch: u64, sample: u64, frame: u64) -> u64 {
    derive_seed(base, &[epoch, sample, frame])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub mask_ratio: f64,
    pub decoder_blocks: usize,
    pub decoder_dim: usize,
    pub decoder_heads: usize,
    pub decoder_mlp: usize,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.75,
            decoder_blocks: 4,
            decoder_dim: 96,
            decoder_heads: 3,
            decoder_mlp: 384,
        }
    }
}

impl MaeConfig {
    pub fn desk() -> Self {
        Self {
            mask_ratio: 0.75,
            decoder_blocks: 1,
            decoder_dim: 24,
            decoder_heads: 3,
            decoder_mlp: 48,
        }
    }
}

pub struct MaeOutput<'t, T: Scalar> {
    /// Decoder predictions for all `N` slots, `[F, N, j·j]`.
    pub prediction: Var<'t, T>,
    /// Predictions at masked slots, `[F, M, j·j]`.
    pub recon: Var<'t, T>,
    /// Sampled patches at masked slots, `[F, M, j·j]`.
    pub targets: Var<'t, T>,
    pub encoder_tokens: usize,
    pub decoder_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct Mae {
    pub model_cfg: ModelConfig,
    pub cfg: MaeConfig,
    pub encoder: FrameEncoder,
    pub embed: Linear,
    pub mask_token: ParamId,
    pub pos_embed: PointEmbedding,
    pub decoder: Encoder,
    pub head: Linear,
}

impl Mae {
    pub fn new<T: Scalar>(
        model_cfg: ModelConfig,
        cfg: MaeConfig,
        seed: u64,
    ) -> Result<(Self, ParamStore<T>)> {
        model_cfg.validate()?;
        if cfg.decoder_blocks == 0 || cfg.decoder_dim == 0 || cfg.decoder_mlp == 0 {
            return Err(Error::config("decoder counts must be ≥ 1"));
        }
        if cfg.decoder_dim > model_cfg.embed_dim {
            return Err(Error::config(format!(
                "decoder dim {} exceeds encoder dim {}",
                cfg.decoder_dim, model_cfg.embed_dim
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let encoder = FrameEncoder::new(&mut pb, &model_cfg)?;
        let mut dp = pb.sub("decoder");
        let dd = cfg.decoder_dim;
        let jj = model_cfg.patch_size * model_cfg.patch_size;
        let embed = Linear::new(&mut dp, "embed", model_cfg.embed_dim, dd);
        let mask_token = dp.trunc_normal("mask_token", &[dd], INIT_STD, false);
        let pos_embed = PointEmbedding::new(
            &mut dp,
            "pos_embed",
            model_cfg.pos_embedding,
            dd,
            model_cfg.apex_index,
        )?;
        let decoder = Encoder::new(
            &mut dp,
            cfg.decoder_blocks,
            dd,
            cfg.decoder_heads,
            cfg.decoder_mlp,
            0.0,
        )?;
        let head = Linear::new(&mut dp, "head", dd, jj);
        Ok((
            Self {
                model_cfg,
                cfg,
                encoder,
                embed,
                mask_token,
                pos_embed,
                decoder,
                head,
            },
            store,
        ))
    }

    /// `frames: [F, H, W]`; `points: [F, N, 2]` for the anatomical source;
    /// one plan per frame, all with the same counts.
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        source: TokenSource,
        frames: Var<'t, T>,
        points: Option<Var<'t, T>>,
        plans: &[MaskPlan],
    ) -> Result<MaeOutput<'t, T>> {
        let batch = self.encoder.tokens(cx, source, frames, points)?;
        let s = batch.tokens.shape();
        let (f, n, k) = (s[0], s[1], s[2]);
        let jj = batch.patches.shape()[2];
        if plans.len() != f {
            return Err(Error::config(format!(
                "{} mask plans for {f} frames",
                plans.len()
            )));
        }
        let (v, m) = (plans[0].visible.len(), plans[0].masked.len());
        for plan in plans {
            if plan.len() != n || plan.visible.len() != v {
                return Err(Error::config(format!(
                    "mask plan covers {} tokens ({} visible); frames have {n} ({v} visible)",
                    plan.len(),
                    plan.visible.len()
                )));
            }
        }
        let flat = |pick: &dyn Fn(&MaskPlan) -> &[usize]| -> Vec<usize> {
            plans
                .iter()
                .enumerate()
                .flat_map(|(fi, p)| pick(p).iter().map(move |&i| fi * n + i))
                .collect()
        };
        let visible_idx = flat(&|p| &p.visible);
        let masked_idx = flat(&|p| &p.masked);

        let visible = batch
            .tokens
            .reshape(&[f * n, k])?
            .index_select(0, &visible_idx)?
            .reshape(&[f, v, k])?;
        let (encoded, _) = self.encoder.encoder.forward(cx, visible, false)?;

        let dd = self.cfg.decoder_dim;
        let enc = self.embed.forward(cx, encoded)?;
        let mask = cx.p(self.mask_token).expand_leading(&[f, m]);
        let padded = cx.tape.concat(&[enc, mask], 1)?.reshape(&[f * n, dd])?;
        // Slot i of frame f takes row `restore[f·n + i]` of the padded
        // [visible…, masked…] sequence.
        let mut restore = vec![0usize; f * n];
        for (fi, plan) in plans.iter().enumerate() {
            for (pos, &i) in plan.visible.iter().chain(&plan.masked).enumerate() {
                restore[fi * n + i] = fi * n + pos;
            }
        }
        let ordered = padded.index_select(0, &restore)?.reshape(&[f, n, dd])?;
        let x = ordered.add(self.pos_embed.forward(cx, batch.points)?)?;
        let (decoded, _) = self.decoder.forward(cx, x, false)?;
        let prediction = self.head.forward(cx, decoded)?;

        let recon = prediction
            .reshape(&[f * n, jj])?
            .index_select(0, &masked_idx)?
            .reshape(&[f, m, jj])?;
        let targets = batch
            .patches
            .reshape(&[f * n, jj])?
            .index_select(0, &masked_idx)?
            .reshape(&[f, m, jj])?;
        Ok(MaeOutput {
            prediction,
            recon,
            targets,
            encoder_tokens: v,
            decoder_tokens: n,
        })
    }
}

/// Mean squared error over the masked patches only.
pub fn mae_loss<'t, T: Scalar>(recon: Var<'t, T>, targets: Var<'t, T>) -> Result<Var<'t, T>> {
    recon.mse(targets)
}

/// Builds a classifier whose frame encoder is copied from a pre-trained
/// parameter set; the decoder is dropped and θ, ω, the temporal block and
/// the head are freshly initialised from `seed`.
pub fn transfer_to_classifier<T: Scalar>(
    pretrained: &ParamStore<T>,
    cfg: ModelConfig,
    seed: u64,
) -> Result<(ViAct, ParamStore<T>)> {
    let (model, mut store) = ViAct::new::<T>(cfg, seed)?;
    copy_encoder(pretrained, &mut store)?;
    Ok((model, store))
}

/// Copies every `encoder.` parameter from `src` into `dst` by name.
pub fn copy_encoder<T: Scalar>(src: &ParamStore<T>, dst: &mut ParamStore<T>) -> Result<usize> {
    let targets: Vec<(ParamId, String)> = dst
        .iter()
        .filter(|(_, e)| ViAct::is_encoder_param(&e.name))
        .map(|(id, e)| (id, e.name.clone()))
        .collect();
    for (id, name) in &targets {
        let value = src
            .by_name(name)
            .ok_or_else(|| Error::config(format!("pre-trained weights lack `{name}`")))?;
        dst.set(*id, value.clone()).map_err(|e| match e {
            Error::Shape { lhs, rhs, .. } => Error::config(format!(
                "`{name}`: fine-tune shape {lhs:?} does not match pre-trained {rhs:?}"
            )),
            other => other,
        })?;
    }
    Ok(targets.len())
}
