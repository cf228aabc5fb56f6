//! Anatomical tokenizer: patches sampled under each myocardium point,
//! linearly embedded and summed with a point positional embedding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_patches, PointSet};
use crate::nn::{Ctx, Linear};
use crate::tensor::{ParamBuilder, Scalar, Tensor, Var};

/// Positional embedding of token points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEmbedding {
    /// Learned linear projection of `(x, y)`.
    PointLinear,
    /// Fixed sinusoidal embeddings of `x` and of `y`, averaged.
    PointSincos,
    /// Linear projection of the offset from the apex point.
    ApexRelativeLinear,
    /// Sinusoidal embedding of the offset from the apex point.
    ApexRelativeSincos,
}

impl PosEmbedding {
    pub const ALL: [PosEmbedding; 4] = [
        PosEmbedding::ApexRelativeSincos,
        PosEmbedding::ApexRelativeLinear,
        PosEmbedding::PointSincos,
        PosEmbedding::PointLinear,
    ];

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            PosEmbedding::PointLinear | PosEmbedding::ApexRelativeLinear
        )
    }

    pub fn is_apex_relative(self) -> bool {
        matches!(
            self,
            PosEmbedding::ApexRelativeLinear | PosEmbedding::ApexRelativeSincos
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosEmbedding::PointLinear => "point_linear",
            PosEmbedding::PointSincos => "point_sincos",
            PosEmbedding::ApexRelativeLinear => "apex_relative_linear",
            PosEmbedding::ApexRelativeSincos => "apex_relative_sincos",
        }
    }
}

impl fmt::Display for PosEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosEmbedding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosEmbedding::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown positional embedding `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub variant: PosEmbedding,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Index of the apex point within each frame's point set.
    pub apex_index: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            variant: PosEmbedding::PointLinear,
            patch_size: 16,
            embed_dim: 192,
            apex_index: 10,
        }
    }
}

/// Base period of the sinusoidal frequency ladder.
pub const SINCOS_BASE: f64 = 10_000.0;

/// Sinusoidal embedding of each coordinate: `[sin(c·ω_i)…, cos(c·ω_i)…]`
/// with `ω_i = BASE^(-i/(dim/2))`, averaged over `x` and `y`.
///
/// `points: [.., 2]` → `[.., dim]`; `dim` must be even.
pub fn sincos_embed<'t, T: Scalar>(points: Var<'t, T>, dim: usize) -> Result<Var<'t, T>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "sincos embedding needs an even dim, got {dim}"
        )));
    }
    let pv = points.value();
    let shape = pv.shape().to_vec();
    if shape.last() != Some(&2) {
        return Err(Error::shape("sincos_embed", &shape, &[2]));
    }
    let half = dim / 2;
    let omega: Vec<f64> = (0..half)
        .map(|i| SINCOS_BASE.powf(-(i as f64) / half as f64))
        .collect();
    let mut out = Vec::with_capacity(pv.numel() / 2 * dim);
    for xy in pv.data().chunks_exact(2) {
        let (x, y) = (xy[0].as_f64(), xy[1].as_f64());
        out.extend(
            omega
                .iter()
                .map(|&w| T::from_f64(0.5 * ((x * w).sin() + (y * w).sin()))),
        );
        out.extend(
            omega
                .iter()
                .map(|&w| T::from_f64(0.5 * ((x * w).cos() + (y * w).cos()))),
        );
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = dim;
    let value = Tensor::new(&out_shape, out)?;
    Ok(points.tape().op(value, &[points], move |g, _| {
        let grad = pv
            .data()
            .chunks_exact(2)
            .zip(g.data().chunks_exact(dim))
            .flat_map(|(xy, gr)| {
                let mut d = [0.0f64; 2];
                for (c, dc) in xy.iter().zip(d.iter_mut()) {
                    let c = c.as_f64();
                    for (i, &w) in omega.iter().enumerate() {
                        *dc += 0.5
                            * w
                            * (gr[i].as_f64() * (c * w).cos()
                                - gr[half + i].as_f64() * (c * w).sin());
                    }
                }
                [T::from_f64(d[0]), T::from_f64(d[1])]
            })
            .collect();
        vec![Some(grad)]
    }))
}

/// Offsets `P^i − P^apex` per frame for `points: [F, N, 2]`.
pub fn relative_to_apex<'t, T: Scalar>(points: Var<'t, T>, apex: usize) -> Result<Var<'t, T>> {
    let pv = points.value();
    let s = pv.shape().to_vec();
    if s.len() != 3 || s[2] != 2 || apex >= s[1] {
        return Err(Error::shape("relative_to_apex", &s, &[apex]));
    }
    let n = s[1];
    let out = pv
        .data()
        .chunks_exact(2 * n)
        .flat_map(|frame| {
            let (ax, ay) = (frame[2 * apex], frame[2 * apex + 1]);
            frame
                .chunks_exact(2)
                .flat_map(move |p| [p[0] - ax, p[1] - ay])
                .collect::<Vec<_>>()
        })
        .collect();
    let value = Tensor::new(&s, out)?;
    Ok(points.tape().op(value, &[points], move |g, _| {
        let mut grad = g.to_vec();
        for frame in grad.chunks_exact_mut(2 * n) {
            let (mut sx, mut sy) = (T::zero(), T::zero());
            for p in frame.chunks_exact(2) {
                sx = sx + p[0];
                sy = sy + p[1];
            }
            frame[2 * apex] = frame[2 * apex] - sx;
            frame[2 * apex + 1] = frame[2 * apex + 1] - sy;
        }
        vec![Some(grad)]
    }))
}

/// Embeds 2-D points with one of the positional variants. Shared by the
/// encoder tokenizer and the MAE decoder.
#[derive(Debug, Clone)]
pub struct PointEmbedding {
    pub variant: PosEmbedding,
    pub dim: usize,
    pub apex_index: usize,
    pub proj: Option<Linear>,
}

impl PointEmbedding {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        variant: PosEmbedding,
        dim: usize,
        apex_index: usize,
    ) -> Result<Self> {
        if !variant.is_linear() && !dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "{variant} needs an even embedding dim, got {dim}"
            )));
        }
        Ok(Self {
            variant,
            dim,
            apex_index,
            proj: variant.is_linear().then(|| Linear::new(pb, name, 2, dim)),
        })
    }

    /// `points: [F, N, 2]` → `[F, N, dim]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        points: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let coords = if self.variant.is_apex_relative() {
            relative_to_apex(points, self.apex_index)?
        } else {
            points
        };
        match &self.proj {
            Some(proj) => proj.forward(cx, coords),
            None => sincos_embed(coords, self.dim),
        }
    }
}

/// Tokens `α` for a batch of frames, with the patches and points they came
/// from.
pub struct TokenBatch<'t, T: Scalar> {
    /// `[F, N, k]`.
    pub tokens: Var<'t, T>,
    /// `[F, N, j·j]` sampled intensities.
    pub patches: Var<'t, T>,
    /// `[F, N, 2]` source coordinates.
    pub points: Var<'t, T>,
}

impl<T: Scalar> TokenBatch<'_, T> {
    pub fn num_frames(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.shape()[1]
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub cfg: EmbedderConfig,
    pub patch_embed: Linear,
    pub pos_embed: PointEmbedding,
}

impl Tokenizer {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: EmbedderConfig) -> Result<Self> {
        if cfg.patch_size == 0 || cfg.embed_dim == 0 {
            return Err(Error::config("patch size and embed dim must be positive"));
        }
        let jj = cfg.patch_size * cfg.patch_size;
        Ok(Self {
            cfg,
            patch_embed: Linear::new(pb, "patch_embed", jj, cfg.embed_dim),
            pos_embed: PointEmbedding::new(
                pb,
                "pos_embed",
                cfg.variant,
                cfg.embed_dim,
                cfg.apex_index,
            )?,
        })
    }

    /// Flattened patches `[.., j·j]` → `[.., k]`.
    pub fn embed_patches<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        patches: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.patch_embed.forward(cx, patches)
    }

    /// Points `[F, N, 2]` → `[F, N, k]`.
    pub fn embed_position<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        points: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.pos_embed.forward(cx, points)
    }

    /// Samples a `j×j` patch under every point and forms
    /// `α = embed(patch) + embed(point)`.
    pub fn tokenize<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        frames: Var<'t, T>,
        points: Var<'t, T>,
    ) -> Result<TokenBatch<'t, T>> {
        let patches = sample_patches(frames, points, self.cfg.patch_size)?;
        let tokens = self
            .embed_patches(cx, patches)?
            .add(self.embed_position(cx, points)?)?;
        Ok(TokenBatch {
            tokens,
            patches,
            points,
        })
    }

    /// Grid baseline: points at the centres of the non-overlapping `j×j`
    /// cells, then the same pipeline as [`Tokenizer::tokenize`].
    pub fn tokenize_grid<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        frames: Var<'t, T>,
    ) -> Result<TokenBatch<'t, T>> {
        let s = frames.shape();
        let grid = grid_points(s[1], s[2], self.cfg.patch_size)?;
        let points = repeat_points(&grid, s[0]);
        self.tokenize(cx, frames, cx.tape.constant(points))
    }
}

/// Centres of the `(h/j)×(w/j)` grid cells, row-major.
pub fn grid_points(h: usize, w: usize, j: usize) -> Result<PointSet> {
    if j == 0 || !h.is_multiple_of(j) || !w.is_multiple_of(j) || h == 0 || w == 0 {
        return Err(Error::config(format!(
            "frame {h}×{w} is not divisible into {j}×{j} patches"
        )));
    }
    let c = (j as f32 - 1.0) / 2.0;
    let points = (0..h / j)
        .flat_map(|r| (0..w / j).map(move |col| [(col * j) as f32 + c, (r * j) as f32 + c]))
        .collect();
    PointSet::new(points)
}

/// `[F, N, 2]` tensor with the same point set in every frame.
pub fn repeat_points<T: Scalar>(points: &PointSet, frames: usize) -> Tensor<T> {
    let one = points.to_tensor::<T>();
    let data = (0..frames)
        .flat_map(|_| one.data().iter().copied())
        .collect();
    Tensor::new(&[frames, points.len(), 2], data).expect("F×N×2 by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tokenizer(cfg: EmbedderConfig) -> (Tokenizer, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tok = Tokenizer::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
        (tok, store)
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_points(224, 224, 16).unwrap().len(), 196);
        assert_eq!(grid_points(16, 16, 16).unwrap().len(), 1);
        assert!(grid_points(224, 220, 16).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PosEmbedding::ALL {
            assert_eq!(v.as_str().parse::<PosEmbedding>().unwrap(), v);
        }
        assert!("learned_table".parse::<PosEmbedding>().is_err());
    }

    #[test]
    fn odd_dim_rejected_for_sincos() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EmbedderConfig {
            variant: PosEmbedding::PointSincos,
            embed_dim: 7,
            ..EmbedderConfig::default()
        };
        assert!(Tokenizer::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg).is_err());
    }

    #[test]
    fn apex_embedding_is_origin_embedding() {
        for variant in [
            PosEmbedding::ApexRelativeLinear,
            PosEmbedding::ApexRelativeSincos,
        ] {
            let cfg = EmbedderConfig {
                variant,
                patch_size: 2,
                embed_dim: 8,
                apex_index: 1,
            };
            let (tok, store) = tokenizer(cfg);
            let tape = Tape::new();
            let cx = Ctx::eval(&tape, &store);
            let pts = tape.constant(
                Tensor::from_f64(
                    &[2, 3, 2],
                    &[1., 2., 5., 6., 9., 1., 3., 3., 7., 7., 0., 4.],
                )
                .unwrap(),
            );
            let origin = tape.constant(Tensor::zeros(&[1, 1, 2]));
            let emb = tok.embed_position(&cx, pts).unwrap().value();
            let zero = match &tok.pos_embed.proj {
                Some(p) => p.forward(&cx, origin).unwrap().value(),
                None => sincos_embed(origin, 8).unwrap().value(),
            };
            for f in 0..2 {
                let row = &emb.data()[(f * 3 + 1) * 8..(f * 3 + 2) * 8];
                assert_eq!(row, zero.data());
            }
        }
    }
}
