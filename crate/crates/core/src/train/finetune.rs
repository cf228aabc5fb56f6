use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    clip_batch, lr_at, lr_at_step, metrics, AdamW, EarlyStop, EpochLog, MeanStd, Metrics,
    OptimConfig, StopDecision,
};
use crate::data::Clip;
use crate::error::{Error, Result};
use crate::mae::copy_encoder;
use crate::model::{ModelConfig, TokenSource, ViAct};
use crate::nn::Ctx;
use crate::seed::derive_seed;
use crate::tensor::{ParamStore, Tape};

#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub optim: OptimConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub source: TokenSource,
    pub seed: u64,
    pub eval_batch: usize,
}

impl FinetuneConfig {
    pub fn new(batch_size: usize, max_epochs: usize, source: TokenSource, seed: u64) -> Self {
        Self {
            optim: OptimConfig {
                total_epochs: max_epochs,
                ..OptimConfig::finetune(batch_size)
            },
            max_epochs,
            patience: 8,
            source,
            seed,
            eval_batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metrics: Metrics,
    /// Sigmoid of each clip's logit.
    pub probs: Vec<f64>,
}

/// Mean BCE, accuracy and weighted F1 at threshold 0.5.
pub fn evaluate(
    model: &ViAct,
    store: &ParamStore<f32>,
    clips: &[Clip],
    source: TokenSource,
    batch: usize,
) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch.max(1)) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let b = clip_batch::<f32>(&refs, model.cfg.frames)?;
        let tape = Tape::inference();
        let cx = Ctx::eval(&tape, store);
        let points = match source {
            TokenSource::Anatomical => Some(tape.constant(b.points)),
            TokenSource::Grid => None,
        };
        let out = model.forward(&cx, source, tape.constant(b.frames), points, false)?;
        let loss = out.logits.bce_with_logits(&b.labels)?;
        total += loss.value().item() as f64 * chunk.len() as f64;
        probs.extend(
            out.logits
                .value()
                .data()
                .iter()
                .map(|&z| 1.0 / (1.0 + (-(z as f64)).exp())),
        );
    }
    let preds: Vec<u8> = probs.iter().map(|&p| (p > 0.5) as u8).collect();
    let labels: Vec<u8> = clips.iter().map(|c| c.label).collect();
    Ok(Evaluation {
        loss: total / clips.len() as f64,
        metrics: metrics(&preds, &labels)?,
        probs,
    })
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub test: Evaluation,
    pub logs: Vec<EpochLog>,
    /// Weights from the epoch with the lowest validation loss.
    pub store: ParamStore<f32>,
}

/// Clip-level BCE training with early stopping on validation loss. The
/// returned weights and test metrics are from the best validation epoch.
pub fn finetune(
    model: &ViAct,
    mut store: ParamStore<f32>,
    splits: [&[Clip]; 3],
    cfg: &FinetuneConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<FinetuneResult> {
    let [train, val, test] = splits;
    cfg.optim.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config(
            "fine-tuning needs non-empty train and val splits",
        ));
    }
    if cfg.max_epochs > cfg.optim.total_epochs {
        return Err(Error::config("max_epochs exceeds the schedule length"));
    }
    let bs = cfg.optim.batch_size;
    let steps = train.len().div_ceil(bs);
    let mut opt = AdamW::new(cfg.optim.clone(), &store);
    let mut stop = EarlyStop::new(cfg.patience);
    let mut best = store.clone();
    let mut logs = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[3, epoch as u64],
        )));
        let mut total = 0.0;
        for (step, ids) in order.chunks(bs).enumerate() {
            let lr = lr_at_step(epoch, step, steps, &cfg.optim)?;
            let refs: Vec<&Clip> = ids.iter().map(|&i| &train[i]).collect();
            let b = clip_batch::<f32>(&refs, model.cfg.frames)?;
            let (loss, grads) = {
                let tape = Tape::new();
                let cx = Ctx::train(
                    &tape,
                    &store,
                    derive_seed(cfg.seed, &[4, epoch as u64, step as u64]),
                );
                let points = match cfg.source {
                    TokenSource::Anatomical => Some(tape.constant(b.points)),
                    TokenSource::Grid => None,
                };
                let out = model.forward(&cx, cfg.source, tape.constant(b.frames), points, false)?;
                let loss = out.logits.bce_with_logits(&b.labels)?;
                let value = loss.value().item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                (value, tape.backward(loss).into_param_grads(&store))
            };
            opt.step(&mut store, &grads, lr)?;
            total += loss * ids.len() as f64;
        }
        epochs_run = epoch + 1;
        let lr = lr_at(epoch, &cfg.optim)?;
        let train_log = EpochLog {
            epoch,
            split: "train".into(),
            loss: total / train.len() as f64,
            accuracy: None,
            weighted_f1: None,
            lr,
        };
        on_epoch(&train_log)?;
        logs.push(train_log);

        let ev = evaluate(model, &store, val, cfg.source, cfg.eval_batch)?;
        let val_log = EpochLog {
            epoch,
            split: "val".into(),
            loss: ev.loss,
            accuracy: Some(ev.metrics.accuracy),
            weighted_f1: Some(ev.metrics.weighted_f1),
            lr,
        };
        on_epoch(&val_log)?;
        logs.push(val_log);
        match stop.observe(epoch, ev.loss) {
            StopDecision::Improved => best = store.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let test_split = if test.is_empty() { val } else { test };
    let test_eval = evaluate(model, &best, test_split, cfg.source, cfg.eval_batch)?;
    Ok(FinetuneResult {
        best_epoch: stop.best_epoch().unwrap_or(0),
        best_val_loss: stop.best_loss(),
        epochs_run,
        test: test_eval,
        logs,
        store: best,
    })
}

#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub results: Vec<FinetuneResult>,
    pub accuracy: MeanStd,
    pub weighted_f1: MeanStd,
}

/// Fine-tunes one fresh classifier per seed, optionally starting its frame
/// encoder from `pretrained`.
pub fn finetune_seeds(
    model_cfg: &ModelConfig,
    pretrained: Option<&ParamStore<f32>>,
    seeds: &[u64],
    splits: [&[Clip]; 3],
    cfg: &FinetuneConfig,
) -> Result<SeedSummary> {
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (model, mut store) = ViAct::new::<f32>(*model_cfg, seed)?;
        if let Some(src) = pretrained {
            copy_encoder(src, &mut store)?;
        }
        let run = FinetuneConfig {
            seed,
            ..cfg.clone()
        };
        results.push(finetune(&model, store, splits, &run, |_| Ok(()))?);
    }
    let acc: Vec<f64> = results.iter().map(|r| r.test.metrics.accuracy).collect();
    let f1: Vec<f64> = results.iter().map(|r| r.test.metrics.weighted_f1).collect();
    Ok(SeedSummary {
        seeds: seeds.to_vec(),
        accuracy: MeanStd::of(&acc),
        weighted_f1: MeanStd::of(&f1),
        results,
    })
}
