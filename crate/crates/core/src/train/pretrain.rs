use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{lr_at, lr_at_step, AdamW, EpochLog, FrameSet, OptimConfig};
use crate::error::{Error, Result};
use crate::mae::{mae_loss, make_mask, mask_seed, Mae};
use crate::model::TokenSource;
use crate::nn::Ctx;
use crate::seed::derive_seed;
use crate::tensor::{ParamStore, Tape};

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub optim: OptimConfig,
    /// Epochs to run; at most `optim.total_epochs`.
    pub epochs: usize,
    pub source: TokenSource,
    pub seed: u64,
}

/// Frame-level masked-autoencoder training. Frames are reshuffled every
/// epoch and each frame's mask is keyed by `(seed, epoch, frame)`.
/// `on_epoch` sees the log line and the current weights.
pub fn pretrain(
    mae: &Mae,
    store: &mut ParamStore<f32>,
    frames: &FrameSet<'_>,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ParamStore<f32>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.optim.validate()?;
    if cfg.epochs > cfg.optim.total_epochs {
        return Err(Error::config(format!(
            "{} epochs exceed the {}-epoch schedule",
            cfg.epochs, cfg.optim.total_epochs
        )));
    }
    if frames.is_empty() {
        return Err(Error::config("no frames to pre-train on"));
    }
    let (h, w) = frames.extent();
    let j = mae.model_cfg.patch_size;
    let n_tokens = match cfg.source {
        TokenSource::Anatomical => frames.points_per_frame(),
        TokenSource::Grid => (h / j) * (w / j),
    };
    let ratio = mae.cfg.mask_ratio;
    let bs = cfg.optim.batch_size;
    let steps = frames.len().div_ceil(bs);
    let mut opt = AdamW::new(cfg.optim.clone(), store);
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[1, epoch as u64],
        )));
        let mut total = 0.0;
        for (step, ids) in order.chunks(bs).enumerate() {
            let lr = lr_at_step(epoch, step, steps, &cfg.optim)?;
            let plans = ids
                .iter()
                .map(|&i| {
                    make_mask(
                        n_tokens,
                        ratio,
                        mask_seed(cfg.seed, epoch as u64, i as u64, 0),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let (fr, pts) = frames.batch::<f32>(ids);
            let (loss, grads) = {
                let tape = Tape::new();
                let cx = Ctx::train(
                    &tape,
                    store,
                    derive_seed(cfg.seed, &[2, epoch as u64, step as u64]),
                );
                let points = match cfg.source {
                    TokenSource::Anatomical => Some(tape.constant(pts)),
                    TokenSource::Grid => None,
                };
                let out = mae.forward(&cx, cfg.source, tape.constant(fr), points, &plans)?;
                let loss = mae_loss(out.recon, out.targets)?;
                let value = loss.value().item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                (value, tape.backward(loss).into_param_grads(store))
            };
            opt.step(store, &grads, lr)?;
            total += loss * ids.len() as f64;
        }
        let log = EpochLog {
            epoch,
            split: "train".into(),
            loss: total / frames.len() as f64,
            accuracy: None,
            weighted_f1: None,
            lr: lr_at(epoch, &cfg.optim)?,
        };
        on_epoch(&log, store)?;
        logs.push(log);
    }
    Ok(logs)
}
