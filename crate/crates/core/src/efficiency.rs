//! Analytic FLOP model and measured cost of one pre-training forward and
//! backward pass, for comparing the anatomical and grid tokenizers.
//!
//! FLOPs count a multiply-add as 2. Per transformer block over `m` tokens
//! of width `k` with MLP width `h`: projections `8·m·k²`, attention
//! (`Q·Kᵀ` and `A·V`) `4·m²·k`, MLP `4·m·k·h`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::mae::{mae_loss, make_mask, Mae, MaeConfig};
use crate::memtrack;
use crate::model::{block_flops, BlockFlops, ModelConfig, TokenSource};
use crate::nn::Ctx;
use crate::tensor::{Tape, Tensor};

/// Forward FLOPs of one MAE pre-training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PretrainFlops {
    pub patch_embed: u64,
    pub encoder: BlockFlops,
    pub decoder: BlockFlops,
    pub head: u64,
}

impl PretrainFlops {
    pub fn total(&self) -> u64 {
        self.patch_embed + self.encoder.total() + self.decoder.total() + self.head
    }
}

/// Tokens per frame for a tokenizer at `size × size`.
pub fn tokens_per_frame(source: TokenSource, size: usize, patch: usize, points: usize) -> usize {
    match source {
        TokenSource::Anatomical => points,
        TokenSource::Grid => (size / patch) * (size / patch),
    }
}

pub fn pretrain_flops(
    model: &ModelConfig,
    mae: &MaeConfig,
    tokens: usize,
    visible: usize,
    batch: usize,
) -> PretrainFlops {
    let b = batch as u64;
    let jj = (model.patch_size * model.patch_size) as u64;
    let k = model.embed_dim as u64;
    let dd = mae.decoder_dim as u64;
    PretrainFlops {
        patch_embed: b * 2 * tokens as u64 * jj * k,
        encoder: block_flops(visible, model.embed_dim, model.mlp_hidden)
            * (b * model.encoder_blocks as u64),
        decoder: block_flops(tokens, mae.decoder_dim, mae.decoder_mlp)
            * (b * mae.decoder_blocks as u64),
        head: b * 2 * tokens as u64 * dd * jj + b * 2 * visible as u64 * k * dd,
    }
}

/// Classifier frame-encoder attention FLOPs per frame (`tokens + 1` with
/// the class token).
pub fn frame_attention_flops(model: &ModelConfig, tokens: usize) -> u64 {
    block_flops(tokens + 1, model.embed_dim, model.mlp_hidden).attention
        * model.encoder_blocks as u64
}

#[derive(Debug, Clone, Serialize)]
pub struct StepCost {
    pub source: TokenSource,
    pub batch: usize,
    pub tokens_per_frame: usize,
    pub visible_tokens: usize,
    pub parameters: usize,
    pub flops: PretrainFlops,
    /// Wall-clock of each timed repeat, milliseconds.
    pub wall_ms: Vec<f64>,
    /// Heap high-water mark during the pass, including the resident
    /// parameters. `None` when the tracking allocator is not installed.
    pub peak_bytes: Option<usize>,
    /// Heap in use before the pass (parameters and inputs).
    pub baseline_bytes: Option<usize>,
}

impl StepCost {
    pub fn median_ms(&self) -> f64 {
        let mut v = self.wall_ms.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        v[v.len() / 2]
    }
}

/// What to measure: a model, its MAE decoder, a tokenizer and a batch of
/// random `size × size` frames.
#[derive(Debug, Clone)]
pub struct StepSpec {
    pub model: ModelConfig,
    pub mae: MaeConfig,
    pub source: TokenSource,
    pub size: usize,
    /// Anatomical points per frame.
    pub points: usize,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl StepSpec {
    /// Full-size encoder at 224², 84 points.
    pub fn full_size(source: TokenSource, batch: usize) -> Self {
        Self {
            model: ModelConfig::tiny(),
            mae: MaeConfig::default(),
            source,
            size: 224,
            points: 84,
            batch,
            repeats: 3,
            seed: 0,
        }
    }
}

/// Times `repeats` forward+backward MAE passes after one untimed warm-up
/// pass.
pub fn measure_pretrain_step(spec: &StepSpec) -> Result<StepCost> {
    let StepSpec {
        ref model,
        mae: ref mae_cfg,
        source,
        size,
        points,
        batch,
        repeats,
        seed,
    } = *spec;
    let (mae, store) = Mae::new::<f32>(*model, *mae_cfg, seed)?;
    let j = model.patch_size;
    let n = tokens_per_frame(source, size, j, points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Tensor::new(
        &[batch, size, size],
        (0..batch * size * size)
            .map(|_| rng.random::<f32>())
            .collect(),
    )?;
    let pts = match source {
        TokenSource::Anatomical => Tensor::new(
            &[batch, n, 2],
            (0..batch * n * 2)
                .map(|_| rng.random_range(0.0..(size - 1) as f32))
                .collect(),
        )?,
        TokenSource::Grid => Tensor::zeros(&[0]),
    };
    let plans = (0..batch)
        .map(|i| make_mask(n, mae_cfg.mask_ratio, seed ^ i as u64))
        .collect::<Result<Vec<_>>>()?;
    let visible = plans[0].visible.len();

    let pass = || -> Result<()> {
        let tape = Tape::new();
        let cx = Ctx::train(&tape, &store, seed);
        let p = match source {
            TokenSource::Anatomical => Some(tape.constant(pts.clone())),
            TokenSource::Grid => None,
        };
        let out = mae.forward(&cx, source, tape.constant(frames.clone()), p, &plans)?;
        let loss = mae_loss(out.recon, out.targets)?;
        let grads = tape.backward(loss);
        drop(grads);
        Ok(())
    };
    pass()?;
    let baseline = memtrack::current();
    memtrack::reset_peak();
    let mut wall_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        pass()?;
        wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let tracked = memtrack::installed();
    Ok(StepCost {
        source,
        batch,
        tokens_per_frame: n,
        visible_tokens: visible,
        parameters: store.num_scalars(),
        flops: pretrain_flops(model, mae_cfg, n, visible, batch),
        wall_ms,
        peak_bytes: tracked.then(memtrack::peak),
        baseline_bytes: tracked.then_some(baseline),
    })
}
