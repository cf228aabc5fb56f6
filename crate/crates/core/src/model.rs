//! Space-time factorised classifier: a per-frame encoder over myocardium
//! tokens plus a frame class token, then a temporal transformer over the
//! encoded class tokens, then a linear head giving one logit per clip.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, Encoder, Linear};
use crate::tensor::{ParamBuilder, ParamId, ParamStore, Scalar, Tensor, Var, INIT_STD};
use crate::tokenizer::{EmbedderConfig, PosEmbedding, TokenBatch, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub temporal_blocks: usize,
    pub mlp_hidden: usize,
    pub patch_size: usize,
    /// Clip length; sizes the learned temporal positional table.
    pub frames: usize,
    pub dropout: f64,
    pub pos_embedding: PosEmbedding,
    pub apex_index: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl ModelConfig {
    /// The "tiny" scale: k=192, 3 heads, 12 encoder blocks, one temporal
    /// block, MLP width 768, 16×16 patches, 18 frames.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 192,
            heads: 3,
            encoder_blocks: 12,
            temporal_blocks: 1,
            mlp_hidden: 768,
            patch_size: 16,
            frames: 18,
            dropout: 0.0,
            pos_embedding: PosEmbedding::PointLinear,
            apex_index: 10,
        }
    }

    /// Workstation-scale preset for 64×64 synthetic clips.
    pub fn desk() -> Self {
        Self {
            embed_dim: 48,
            heads: 3,
            encoder_blocks: 2,
            temporal_blocks: 1,
            mlp_hidden: 96,
            patch_size: 8,
            frames: 8,
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.embed_dim,
            self.heads,
            self.encoder_blocks,
            self.temporal_blocks,
            self.mlp_hidden,
            self.patch_size,
            self.frames,
        ];
        if counts.contains(&0) {
            return Err(Error::config(format!("model counts must be ≥ 1: {self:?}")));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn embedder(&self) -> EmbedderConfig {
        EmbedderConfig {
            variant: self.pos_embedding,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            apex_index: self.apex_index,
        }
    }

    /// Closed-form parameter count of the classifier.
    pub fn num_params(&self) -> usize {
        let (k, jj) = (self.embed_dim, self.patch_size * self.patch_size);
        let pos = if self.pos_embedding.is_linear() {
            Linear::num_params(2, k)
        } else {
            0
        };
        Linear::num_params(jj, k)
            + pos
            + k // frame class token
            + Encoder::num_params(self.encoder_blocks, k, self.mlp_hidden)
            + self.frames * k // temporal positional table
            + k // temporal class token
            + Encoder::num_params(self.temporal_blocks, k, self.mlp_hidden)
            + Linear::num_params(k, 1)
    }
}

/// Which points feed the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    /// Myocardium points carried by the clip.
    Anatomical,
    /// Regular non-overlapping patch grid over the whole frame.
    Grid,
}

impl std::str::FromStr for TokenSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anatomical" => Ok(TokenSource::Anatomical),
            "grid" => Ok(TokenSource::Grid),
            other => Err(Error::config(format!("unknown tokenizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for TokenSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TokenSource::Anatomical => "anatomical",
            TokenSource::Grid => "grid",
        })
    }
}

/// Tokenizer plus transformer encoder. This is the part shared with MAE
/// pre-training; all of its parameters live under `encoder.`.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    pub tokenizer: Tokenizer,
    pub encoder: Encoder,
}

impl FrameEncoder {
    pub const PREFIX: &'static str = "encoder";

    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let mut pb = pb.sub(Self::PREFIX);
        Ok(Self {
            tokenizer: Tokenizer::new(&mut pb, cfg.embedder())?,
            encoder: Encoder::new(
                &mut pb,
                cfg.encoder_blocks,
                cfg.embed_dim,
                cfg.heads,
                cfg.mlp_hidden,
                cfg.dropout,
            )?,
        })
    }

    pub fn tokens<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        source: TokenSource,
        frames: Var<'t, T>,
        points: Option<Var<'t, T>>,
    ) -> Result<TokenBatch<'t, T>> {
        match (source, points) {
            (TokenSource::Anatomical, Some(points)) => self.tokenizer.tokenize(cx, frames, points),
            (TokenSource::Anatomical, None) => {
                Err(Error::config("anatomical tokenizer needs points"))
            }
            (TokenSource::Grid, _) => self.tokenizer.tokenize_grid(cx, frames),
        }
    }
}

/// Encoded frame class tokens, plus the final block's attention when asked.
pub struct FrameEncoding<'t, T: Scalar> {
    /// `[F, k]`.
    pub cls: Var<'t, T>,
    /// `[F, heads, N+1, N+1]`, class token at index 0.
    pub attention: Option<Tensor<T>>,
    pub sequence_len: usize,
}

pub struct ClipOutput<'t, T: Scalar> {
    /// `[B]`.
    pub logits: Var<'t, T>,
    pub frame_attention: Option<Tensor<T>>,
    pub frame_sequence_len: usize,
    pub temporal_sequence_len: usize,
}

#[derive(Debug, Clone)]
pub struct ViAct {
    pub cfg: ModelConfig,
    pub frame_encoder: FrameEncoder,
    /// Frame class token θ, shared by every frame.
    pub frame_token: ParamId,
    pub temporal_pos: ParamId,
    /// Temporal class token ω.
    pub temporal_token: ParamId,
    pub temporal: Encoder,
    pub head: Linear,
}

impl ViAct {
    pub fn new<T: Scalar>(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let k = cfg.embed_dim;
        let frame_encoder = FrameEncoder::new(&mut pb, &cfg)?;
        let frame_token = pb.trunc_normal("frame_token", &[k], INIT_STD, false);
        let mut tp = pb.sub("temporal");
        let temporal_pos = tp.trunc_normal("pos_embed", &[cfg.frames, k], INIT_STD, false);
        let temporal_token = tp.trunc_normal("cls_token", &[k], INIT_STD, false);
        let temporal = Encoder::new(
            &mut tp,
            cfg.temporal_blocks,
            k,
            cfg.heads,
            cfg.mlp_hidden,
            cfg.dropout,
        )?;
        let head = Linear::new(&mut pb, "head", k, 1);
        let model = Self {
            cfg,
            frame_encoder,
            frame_token,
            temporal_pos,
            temporal_token,
            temporal,
            head,
        };
        Ok((model, store))
    }

    /// Prepends θ to each frame's tokens `[F, N, k]` and returns the
    /// encoded class tokens `[F, k]`.
    pub fn encode_frames<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        tokens: Var<'t, T>,
        capture: bool,
    ) -> Result<FrameEncoding<'t, T>> {
        let s = tokens.shape();
        let (f, n, k) = (s[0], s[1], s[2]);
        if n == 0 {
            return Err(Error::config("frame has no tokens"));
        }
        let theta = cx.p(self.frame_token).expand_leading(&[f, 1]);
        let x = cx.tape.concat(&[theta, tokens], 1)?;
        let (y, attention) = self.frame_encoder.encoder.forward(cx, x, capture)?;
        Ok(FrameEncoding {
            cls: y.narrow(1, 0, 1)?.reshape(&[f, k])?,
            attention,
            sequence_len: n + 1,
        })
    }

    /// Adds the temporal table to `cls: [B·T, k]`, prepends ω and returns
    /// the encoded temporal class token `[B, k]` and the sequence length.
    pub fn encode_clip<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        cls: Var<'t, T>,
        clips: usize,
    ) -> Result<(Var<'t, T>, usize)> {
        let (t, k) = (self.cfg.frames, self.cfg.embed_dim);
        if cls.shape() != [clips * t, k] {
            return Err(Error::shape("encode_clip", &cls.shape(), &[clips * t, k]));
        }
        let x = cls.reshape(&[clips, t, k])?.add(cx.p(self.temporal_pos))?;
        let omega = cx.p(self.temporal_token).expand_leading(&[clips, 1]);
        let x = cx.tape.concat(&[omega, x], 1)?;
        let (y, _) = self.temporal.forward(cx, x, false)?;
        Ok((y.narrow(1, 0, 1)?.reshape(&[clips, k])?, t + 1))
    }

    /// `ω̂: [B, k]` → logits `[B]`.
    pub fn classify<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        omega: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let b = omega.shape()[0];
        self.head.forward(cx, omega)?.reshape(&[b])
    }

    /// `frames: [B, T, H, W]`, `points: [B, T, N, 2]` (ignored for the grid
    /// tokenizer).
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        source: TokenSource,
        frames: Var<'t, T>,
        points: Option<Var<'t, T>>,
        capture: bool,
    ) -> Result<ClipOutput<'t, T>> {
        let s = frames.shape();
        let [b, t, h, w] = s[..] else {
            return Err(Error::shape("forward", &s, &[4]));
        };
        if t != self.cfg.frames {
            return Err(Error::config(format!(
                "clip has {t} frames, model expects {}",
                self.cfg.frames
            )));
        }
        let frames = frames.reshape(&[b * t, h, w])?;
        let points = match points {
            Some(p) => {
                let ps = p.shape();
                if ps.len() != 4 || ps[..2] != [b, t] {
                    return Err(Error::shape("forward points", &ps, &[b, t]));
                }
                Some(p.reshape(&[b * t, ps[2], 2])?)
            }
            None => None,
        };
        let tokens = self.frame_encoder.tokens(cx, source, frames, points)?;
        let enc = self.encode_frames(cx, tokens.tokens, capture)?;
        let (omega, temporal_len) = self.encode_clip(cx, enc.cls, b)?;
        Ok(ClipOutput {
            logits: self.classify(cx, omega)?,
            frame_attention: enc.attention,
            frame_sequence_len: enc.sequence_len,
            temporal_sequence_len: temporal_len,
        })
    }

    /// Names of every parameter created by the frame encoder.
    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("encoder.")
    }
}

/// Attention of the class token (query row 0) over the `N` point tokens,
/// for one head of `attn: [F, heads, N+1, N+1]`. Returns `F` rows of `N`.
pub fn class_token_attention<T: Scalar>(attn: &Tensor<T>, head: usize) -> Result<Vec<Vec<f64>>> {
    let s = attn.shape();
    if s.len() != 4 || s[2] != s[3] || head >= s[1] {
        return Err(Error::shape("class_token_attention", s, &[head]));
    }
    let (f, h, m) = (s[0], s[1], s[2]);
    Ok((0..f)
        .map(|fi| {
            let row = (fi * h + head) * m * m;
            attn.data()[row + 1..row + m]
                .iter()
                .map(|v| v.as_f64())
                .collect()
        })
        .collect())
}

/// Rescales scores to `[0, 1]`; a constant row maps to all ones.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Per-block analytic FLOPs (2 per multiply-add) at sequence length `m`.
pub fn block_flops(m: usize, dim: usize, mlp_hidden: usize) -> BlockFlops {
    let (m, k, h) = (m as u64, dim as u64, mlp_hidden as u64);
    BlockFlops {
        projections: 2 * m * 4 * k * k,
        attention: 2 * 2 * m * m * k,
        mlp: 2 * m * 2 * k * h,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BlockFlops {
    /// Q, K, V and output projections.
    pub projections: u64,
    /// `Q·Kᵀ` and `softmax(·)·V`.
    pub attention: u64,
    pub mlp: u64,
}

impl BlockFlops {
    pub fn total(&self) -> u64 {
        self.projections + self.attention + self.mlp
    }
}

impl std::ops::Mul<u64> for BlockFlops {
    type Output = BlockFlops;
    fn mul(self, n: u64) -> BlockFlops {
        BlockFlops {
            projections: self.projections * n,
            attention: self.attention * n,
            mlp: self.mlp * n,
        }
    }
}

impl std::ops::Add for BlockFlops {
    type Output = BlockFlops;
    fn add(self, o: BlockFlops) -> BlockFlops {
        BlockFlops {
            projections: self.projections + o.projections,
            attention: self.attention + o.attention,
            mlp: self.mlp + o.mlp,
        }
    }
}
