//! Transformer building blocks shared by the classifier and the MAE.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamBuilder, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

/// Forward-pass context: the tape being recorded, the parameters read from,
/// and the dropout stream when training.
pub struct Ctx<'t, T: Scalar> {
    pub tape: &'t Tape<T>,
    pub store: &'t ParamStore<T>,
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t, T: Scalar> Ctx<'t, T> {
    pub fn eval(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self {
            tape,
            store,
            train: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(tape: &'t Tape<T>, store: &'t ParamStore<T>, seed: u64) -> Self {
        Self {
            tape,
            store,
            train: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.tape.param(self.store, id)
    }

    pub fn dropout(&self, x: Var<'t, T>, rate: f64) -> Var<'t, T> {
        if !self.train || rate <= 0.0 {
            return x;
        }
        x.dropout(rate, &mut *self.rng.borrow_mut())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Glorot-uniform bound.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Linear {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let mut pb = pb.sub(name);
        Self {
            weight: pb.uniform(
                "weight",
                &[in_dim, out_dim],
                xavier_bound(in_dim, out_dim),
                true,
            ),
            bias: pb.constant("bias", &[out_dim], 0.0, false),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(cx.p(self.weight), cx.p(self.bias))
    }

    pub fn num_params(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Self {
        let mut pb = pb.sub(name);
        Self {
            gain: pb.constant("weight", &[dim], 1.0, false),
            bias: pb.constant("bias", &[dim], 0.0, false),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layernorm(cx.p(self.gain), cx.p(self.bias), LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "embed dim {dim} not divisible by {heads} heads"
            )));
        }
        let mut pb = pb.sub("mhsa");
        Ok(Self {
            q: Linear::new(&mut pb, "q", dim, dim),
            k: Linear::new(&mut pb, "k", dim, dim),
            v: Linear::new(&mut pb, "v", dim, dim),
            proj: Linear::new(&mut pb, "proj", dim, dim),
            heads,
        })
    }

    /// `x: [B, M, k]`. With `capture`, also returns the attention
    /// probabilities `[B, heads, M, M]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        x: Var<'t, T>,
        capture: bool,
    ) -> Result<(Var<'t, T>, Option<Tensor<T>>)> {
        let s = x.shape();
        let [b, m, k] = s[..] else {
            return Err(Error::shape("attention", &s, &[3]));
        };
        let (h, d) = (self.heads, k / self.heads);
        let split = |y: Var<'t, T>, axes: &[usize]| y.reshape(&[b, m, h, d])?.permute(axes);
        let q = split(self.q.forward(cx, x)?, &[0, 2, 1, 3])?;
        let kt = split(self.k.forward(cx, x)?, &[0, 2, 3, 1])?;
        let v = split(self.v.forward(cx, x)?, &[0, 2, 1, 3])?;
        let attn = q.matmul(kt)?.scale(1.0 / (d as f64).sqrt()).softmax(3)?;
        let captured = capture.then(|| attn.value());
        let out = attn
            .matmul(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, m, k])?;
        Ok((self.proj.forward(cx, out)?, captured))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, dim: usize, hidden: usize) -> Self {
        let mut pb = pb.sub("mlp");
        Self {
            fc1: Linear::new(&mut pb, "fc1", dim, hidden),
            fc2: Linear::new(&mut pb, "fc2", hidden, dim),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.fc2.forward(cx, self.fc1.forward(cx, x)?.gelu())
    }
}

/// Pre-norm transformer block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub dropout: f64,
}

impl Block {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        dim: usize,
        heads: usize,
        mlp_hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(pb, "norm1", dim),
            attn: Attention::new(pb, dim, heads)?,
            norm2: LayerNorm::new(pb, "norm2", dim),
            mlp: Mlp::new(pb, dim, mlp_hidden),
            dropout,
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        x: Var<'t, T>,
        capture: bool,
    ) -> Result<(Var<'t, T>, Option<Tensor<T>>)> {
        let (a, attn) = self.attn.forward(cx, self.norm1.forward(cx, x)?, capture)?;
        let x = x.add(cx.dropout(a, self.dropout))?;
        let m = self.mlp.forward(cx, self.norm2.forward(cx, x)?)?;
        Ok((x.add(cx.dropout(m, self.dropout))?, attn))
    }

    /// Closed-form parameter count of one block.
    pub fn num_params(dim: usize, mlp_hidden: usize) -> usize {
        2 * 2 * dim
            + 4 * Linear::num_params(dim, dim)
            + Linear::num_params(dim, mlp_hidden)
            + Linear::num_params(mlp_hidden, dim)
    }
}

/// Stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

impl Encoder {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        depth: usize,
        dim: usize,
        heads: usize,
        mlp_hidden: usize,
        dropout: f64,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| {
                Block::new(
                    &mut pb.sub(&format!("block{i}")),
                    dim,
                    heads,
                    mlp_hidden,
                    dropout,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            norm: LayerNorm::new(pb, "norm", dim),
        })
    }

    /// Runs all blocks and the final norm. With `capture`, returns the last
    /// block's attention probabilities.
    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, T>,
        mut x: Var<'t, T>,
        capture: bool,
    ) -> Result<(Var<'t, T>, Option<Tensor<T>>)> {
        let mut attn = None;
        let last = self.blocks.len().saturating_sub(1);
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, a) = block.forward(cx, x, capture && i == last)?;
            x = y;
            attn = a.or(attn);
        }
        Ok((self.norm.forward(cx, x)?, attn))
    }

    pub fn num_params(depth: usize, dim: usize, mlp_hidden: usize) -> usize {
        depth * Block::num_params(dim, mlp_hidden) + 2 * dim
    }
}
