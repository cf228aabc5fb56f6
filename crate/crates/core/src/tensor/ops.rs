//! Differentiable primitives recorded on a [`Tape`].
//!
//! Broadcasting is limited to a right-hand operand whose shape is a suffix
//! of the left-hand shape (bias vectors, positional tables, LN affine).

use rand::Rng;

use super::tensor::numel;
use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn is_suffix(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

/// Sums `g` (length `reps * m`) down to its trailing `m`-element pattern.
fn reduce_to_suffix<T: Scalar>(g: &[T], m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m];
    if m == 0 {
        return out;
    }
    for chunk in g.chunks_exact(m) {
        out.iter_mut().zip(chunk).for_each(|(o, &v)| *o = *o + v);
    }
    out
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Row-major strided matrix view used to drive `gemm`.
#[derive(Clone, Copy)]
struct View {
    rs: isize,
    cs: isize,
}

impl View {
    fn rows(cols: usize) -> Self {
        View {
            rs: cols as isize,
            cs: 1,
        }
    }
    /// Transposed view of a row-major matrix with `cols` columns.
    fn transposed(cols: usize) -> Self {
        View {
            rs: 1,
            cs: cols as isize,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: slices cover the described matrices (checked by callers via
    // shape validation); `c` is a distinct mutable buffer.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            av.rs,
            av.cs,
            b.as_ptr(),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn check_same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn binary_shapes(&self, rhs: &Var<'t, T>, op: &'static str) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        if !is_suffix(a.shape(), b.shape()) {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        Ok((a, b))
    }

    /// Elementwise sum; `rhs` may be a trailing-shape suffix of `self`.
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = self.binary_shapes(&rhs, "add")?;
        let m = b.numel().max(1);
        let out: Vec<T> = a
            .data()
            .chunks(m)
            .flat_map(|c| c.iter().zip(b.data()).map(|(&x, &y)| x + y))
            .collect();
        let broadcast = a.numel() != b.numel();
        let value = Tensor::from_parts(a.shape().to_vec(), out);
        Ok(self.tape.op(value, &[self, rhs], move |g, need| {
            let gb = need[1].then(|| {
                if broadcast {
                    reduce_to_suffix(g.data(), m)
                } else {
                    g.to_vec()
                }
            });
            vec![need[0].then(|| g.to_vec()), gb]
        }))
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = self.binary_shapes(&rhs, "sub")?;
        let m = b.numel().max(1);
        let out: Vec<T> = a
            .data()
            .chunks(m)
            .flat_map(|c| c.iter().zip(b.data()).map(|(&x, &y)| x - y))
            .collect();
        let value = Tensor::from_parts(a.shape().to_vec(), out);
        Ok(self.tape.op(value, &[self, rhs], move |g, need| {
            let gb = need[1].then(|| {
                let mut r = reduce_to_suffix(g.data(), m);
                r.iter_mut().for_each(|v| *v = -*v);
                r
            });
            vec![need[0].then(|| g.to_vec()), gb]
        }))
    }

    /// Elementwise product; `rhs` may be a trailing-shape suffix of `self`.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = self.binary_shapes(&rhs, "mul")?;
        let m = b.numel().max(1);
        let out: Vec<T> = a
            .data()
            .chunks(m)
            .flat_map(|c| c.iter().zip(b.data()).map(|(&x, &y)| x * y))
            .collect();
        let value = Tensor::from_parts(a.shape().to_vec(), out);
        Ok(self.tape.op(value, &[self, rhs], move |g, need| {
            let ga = need[0].then(|| {
                g.data()
                    .chunks(m)
                    .flat_map(|c| c.iter().zip(b.data()).map(|(&x, &y)| x * y))
                    .collect()
            });
            let gb = need[1].then(|| {
                let prod: Vec<T> = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .map(|(&x, &y)| x * y)
                    .collect();
                reduce_to_suffix(&prod, m)
            });
            vec![ga, gb]
        }))
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        let value = self.value().map(|v| v * c);
        self.tape.op(value, &[self], move |g, _| {
            vec![Some(g.data().iter().map(|&v| v * c).collect())]
        })
    }

    /// Matrix product over the last two axes.
    ///
    /// Supported batch layouts: `[.., m, p] × [p, n]` (shared right
    /// operand), `[m, p] × [.., p, n]`, and equal batch dims on both sides.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same_tape(&rhs);
        let (a, b) = (self.value(), rhs.value());
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        let err = || Error::shape("matmul", &ash, &bsh);
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(err());
        }
        let (m, p) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (p2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if p != p2 {
            return Err(err());
        }
        let (abatch, bbatch) = (&ash[..ash.len() - 2], &bsh[..bsh.len() - 2]);

        enum Layout {
            SharedRhs,
            SharedLhs,
            Batched,
        }
        let layout = if bbatch.is_empty() {
            Layout::SharedRhs
        } else if abatch.is_empty() {
            Layout::SharedLhs
        } else if abatch == bbatch {
            Layout::Batched
        } else {
            return Err(err());
        };
        let batch = if bbatch.is_empty() {
            numel(abatch)
        } else {
            numel(bbatch)
        };
        let mut out_shape = if bbatch.is_empty() {
            abatch.to_vec()
        } else {
            bbatch.to_vec()
        };
        out_shape.extend([m, n]);

        let mut c = vec![T::zero(); batch * m * n];
        let (ad, bd) = (a.data(), b.data());
        match layout {
            Layout::SharedRhs => {
                gemm(
                    batch * m,
                    p,
                    n,
                    ad,
                    View::rows(p),
                    bd,
                    View::rows(n),
                    &mut c,
                    false,
                );
            }
            Layout::SharedLhs => {
                for i in 0..batch {
                    let bi = &bd[i * p * n..(i + 1) * p * n];
                    let ci = &mut c[i * m * n..(i + 1) * m * n];
                    gemm(m, p, n, ad, View::rows(p), bi, View::rows(n), ci, false);
                }
            }
            Layout::Batched => {
                for i in 0..batch {
                    let ai = &ad[i * m * p..(i + 1) * m * p];
                    let bi = &bd[i * p * n..(i + 1) * p * n];
                    let ci = &mut c[i * m * n..(i + 1) * m * n];
                    gemm(m, p, n, ai, View::rows(p), bi, View::rows(n), ci, false);
                }
            }
        }
        let flops = 2 * (batch * m * p * n) as u64;
        match layout {
            Layout::SharedRhs => self.tape.add_flops(flops, 0),
            _ => self.tape.add_flops(0, flops),
        }

        let value = Tensor::from_parts(out_shape, c);
        Ok(self.tape.op(value, &[self, rhs], move |g, need| {
            let (ad, bd, gd) = (a.data(), b.data(), g.data());
            let mut ga = need[0].then(|| vec![T::zero(); ad.len()]);
            let mut gb = need[1].then(|| vec![T::zero(); bd.len()]);
            match layout {
                Layout::SharedRhs => {
                    let rows = batch * m;
                    if let Some(ga) = ga.as_mut() {
                        gemm(
                            rows,
                            n,
                            p,
                            gd,
                            View::rows(n),
                            bd,
                            View::transposed(n),
                            ga,
                            false,
                        );
                    }
                    if let Some(gb) = gb.as_mut() {
                        gemm(
                            p,
                            rows,
                            n,
                            ad,
                            View::transposed(p),
                            gd,
                            View::rows(n),
                            gb,
                            false,
                        );
                    }
                }
                Layout::SharedLhs => {
                    for i in 0..batch {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let bi = &bd[i * p * n..(i + 1) * p * n];
                        if let Some(ga) = ga.as_mut() {
                            gemm(
                                m,
                                n,
                                p,
                                gi,
                                View::rows(n),
                                bi,
                                View::transposed(n),
                                ga,
                                true,
                            );
                        }
                        if let Some(gb) = gb.as_mut() {
                            let gbi = &mut gb[i * p * n..(i + 1) * p * n];
                            gemm(
                                p,
                                m,
                                n,
                                ad,
                                View::transposed(p),
                                gi,
                                View::rows(n),
                                gbi,
                                false,
                            );
                        }
                    }
                }
                Layout::Batched => {
                    for i in 0..batch {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let ai = &ad[i * m * p..(i + 1) * m * p];
                        let bi = &bd[i * p * n..(i + 1) * p * n];
                        if let Some(ga) = ga.as_mut() {
                            let gai = &mut ga[i * m * p..(i + 1) * m * p];
                            gemm(
                                m,
                                n,
                                p,
                                gi,
                                View::rows(n),
                                bi,
                                View::transposed(n),
                                gai,
                                false,
                            );
                        }
                        if let Some(gb) = gb.as_mut() {
                            let gbi = &mut gb[i * p * n..(i + 1) * p * n];
                            gemm(
                                p,
                                m,
                                n,
                                ai,
                                View::transposed(p),
                                gi,
                                View::rows(n),
                                gbi,
                                false,
                            );
                        }
                    }
                }
            }
            vec![ga, gb]
        }))
    }

    /// `self · w + b` over the trailing axis.
    pub fn linear(self, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul(w)?.add(b)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let value = a.reshape(shape)?;
        let orig = a.shape().to_vec();
        Ok(self.tape.op(value, &[self], move |g, _| {
            debug_assert_eq!(numel(&orig), g.numel());
            vec![Some(g.to_vec())]
        }))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let rank = a.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::shape("permute", a.shape(), axes));
        }
        let value = permute_tensor(&a, axes);
        let mut inverse = vec![0; rank];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        Ok(self.tape.op(value, &[self], move |g, _| {
            vec![Some(permute_tensor(g, &inverse).into_vec())]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(Error::Axis { axis: 1, rank });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(&axes)
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Axis {
                axis,
                rank: a.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(a.shape(), axis);
        if start + len > extent {
            return Err(Error::shape("narrow", a.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::from_parts(shape, data);
        Ok(self.tape.op(value, &[self], move |g, _| {
            let mut ga = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                let base = o * extent * inner + start * inner;
                ga[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(ga)]
        }))
    }

    /// Picks entries along `axis` by index (repeats allowed); the backward
    /// pass scatter-adds.
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Axis {
                axis,
                rank: a.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(a.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(Error::shape("index_select", a.shape(), &[bad]));
        }
        let k = indices.len();
        let mut data = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                data.extend_from_slice(&a.data()[base..base + inner]);
            }
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = k;
        let value = Tensor::from_parts(shape, data);
        let indices = indices.to_vec();
        Ok(self.tape.op(value, &[self], move |g, _| {
            let mut ga = vec![T::zero(); outer * extent * inner];
            let gd = g.data();
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let src = (o * k + j) * inner;
                    let dst = (o * extent + i) * inner;
                    ga[dst..dst + inner]
                        .iter_mut()
                        .zip(&gd[src..src + inner])
                        .for_each(|(d, &s)| *d = *d + s);
                }
            }
            vec![Some(ga)]
        }))
    }

    /// Repeats the tensor under new leading axes `lead`.
    pub fn expand_leading(self, lead: &[usize]) -> Var<'t, T> {
        let a = self.value();
        let reps = numel(lead);
        let mut data = Vec::with_capacity(reps * a.numel());
        for _ in 0..reps {
            data.extend_from_slice(a.data());
        }
        let mut shape = lead.to_vec();
        shape.extend_from_slice(a.shape());
        let m = a.numel();
        self.tape
            .op(Tensor::from_parts(shape, data), &[self], move |g, _| {
                vec![Some(reduce_to_suffix(g.data(), m))]
            })
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let a = self.value();
        let s: T = a.data().iter().copied().sum();
        let n = a.numel();
        self.tape.op(Tensor::scalar(s), &[self], move |g, _| {
            vec![Some(vec![g.item(); n])]
        })
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Axis {
                axis,
                rank: a.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(a.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &a.data()[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &s)| *d = *d + s);
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        Ok(self
            .tape
            .op(Tensor::from_parts(shape, out), &[self], move |g, _| {
                let mut ga = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    for _ in 0..extent {
                        ga.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(ga)]
            }))
    }

    /// Softmax along `axis`, stabilised by subtracting the per-slice max.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Axis {
                axis,
                rank: a.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(a.shape(), axis);
        let mut y = a.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * extent + e) * inner + i;
                let max = (0..extent)
                    .map(|e| y[at(e)])
                    .fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for e in 0..extent {
                    let v = (y[at(e)] - max).exp();
                    y[at(e)] = v;
                    sum = sum + v;
                }
                for e in 0..extent {
                    y[at(e)] = y[at(e)] / sum;
                }
            }
        }
        let value = Tensor::from_parts(a.shape().to_vec(), y);
        let yv = value.clone();
        Ok(self.tape.op(value, &[self], move |g, _| {
            let (yd, gd) = (yv.data(), g.data());
            let mut ga = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |e: usize| (o * extent + e) * inner + i;
                    let dot: T = (0..extent).map(|e| gd[at(e)] * yd[at(e)]).sum();
                    for e in 0..extent {
                        ga[at(e)] = yd[at(e)] * (gd[at(e)] - dot);
                    }
                }
            }
            vec![Some(ga)]
        }))
    }

    /// Layer normalisation over the trailing axis with affine `gain`, `bias`.
    pub fn layernorm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let (gv, bv) = (gain.value(), bias.value());
        let n = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layernorm", x.shape(), gv.shape()))?;
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(Error::shape("layernorm", x.shape(), gv.shape()));
        }
        let eps = T::from_f64(eps);
        let nt = T::from_f64(n as f64);
        let rows = x.numel() / n.max(1);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in x.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let out: Vec<T> = xhat
            .chunks(n)
            .flat_map(|row| {
                row.iter()
                    .zip(gv.data().iter().zip(bv.data()))
                    .map(|(&h, (&g, &b))| h * g + b)
            })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.tape.op(value, &[self, gain, bias], move |g, need| {
            let gd = g.data();
            let gx = need[0].then(|| {
                let mut gx = Vec::with_capacity(gd.len());
                for ((grow, hrow), &r) in gd.chunks(n).zip(xhat.chunks(n)).zip(&rstd) {
                    let dh: Vec<T> = grow.iter().zip(gv.data()).map(|(&a, &b)| a * b).collect();
                    let mean_dh = dh.iter().copied().sum::<T>() / nt;
                    let mean_dh_h = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() / nt;
                    gx.extend(
                        dh.iter()
                            .zip(hrow)
                            .map(|(&d, &h)| r * (d - mean_dh - h * mean_dh_h)),
                    );
                }
                gx
            });
            let ggain = need[1].then(|| {
                let prod: Vec<T> = gd.iter().zip(&xhat).map(|(&a, &b)| a * b).collect();
                reduce_to_suffix(&prod, n)
            });
            let gbias = need[2].then(|| reduce_to_suffix(gd, n));
            vec![gx, ggain, gbias]
        }))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(self) -> Var<'t, T> {
        let x = self.value();
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let value = x.map(|v| half * v * (T::one() + (v * inv_sqrt2).erf()));
        self.tape.op(value, &[self], move |g, _| {
            let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            let ga = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| {
                    let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                    let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                    gv * (cdf + v * pdf)
                })
                .collect();
            vec![Some(ga)]
        })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let value = self.value().map(sigmoid);
        let y = value.clone();
        self.tape.op(value, &[self], move |g, _| {
            let ga = y
                .data()
                .iter()
                .zip(g.data())
                .map(|(&s, &gv)| gv * s * (T::one() - s))
                .collect();
            vec![Some(ga)]
        })
    }

    /// Mean binary cross-entropy of logits against `targets` in {0, 1}.
    pub fn bce_with_logits(self, targets: &Tensor<T>) -> Result<Var<'t, T>> {
        let z = self.value();
        if z.shape() != targets.shape() {
            return Err(Error::shape("bce_with_logits", z.shape(), targets.shape()));
        }
        let n = T::from_f64(z.numel().max(1) as f64);
        let loss: T = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>()
            / n;
        let targets = targets.clone();
        Ok(self.tape.op(Tensor::scalar(loss), &[self], move |g, _| {
            let scale = g.item() / n;
            let ga = z
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                .collect();
            vec![Some(ga)]
        }))
    }

    /// Mean squared error against `target`; gradients flow to both sides.
    pub fn mse(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same_tape(&target);
        let (a, b) = (self.value(), target.value());
        if a.shape() != b.shape() {
            return Err(Error::shape("mse", a.shape(), b.shape()));
        }
        let n = T::from_f64(a.numel().max(1) as f64);
        let diff: Vec<T> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
        Ok(self
            .tape
            .op(Tensor::scalar(loss), &[self, target], move |g, need| {
                let c = T::from_f64(2.0) * g.item() / n;
                let ga = need[0].then(|| diff.iter().map(|&d| d * c).collect());
                let gb = need[1].then(|| diff.iter().map(|&d| -d * c).collect());
                vec![ga, gb]
            }))
    }

    /// Inverted dropout with keep-probability `1 - rate`.
    pub fn dropout(self, rate: f64, rng: &mut impl Rng) -> Var<'t, T> {
        if rate <= 0.0 {
            return self;
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let shape = self.shape();
        let mask: Vec<T> = (0..numel(&shape))
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = self.tape.constant(Tensor::from_parts(shape, mask));
        self.mul(mask).expect("mask shares the input shape")
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn permute_tensor<T: Scalar>(a: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = a.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let src_strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let src = a.data();
    let mut out = Vec::with_capacity(a.numel());
    if a.numel() == 0 {
        return Tensor::from_parts(out_shape, out);
    }
    // Copy contiguous runs when the innermost axis stays innermost.
    let (run, outer_rank) = if rank > 0 && axes[rank - 1] == rank - 1 {
        (shape[rank - 1], rank - 1)
    } else {
        (1, rank)
    };
    let mut idx = vec![0usize; outer_rank];
    loop {
        let offset: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.extend_from_slice(&src[offset..offset + run]);
        let mut d = outer_rank;
        loop {
            if d == 0 {
                return Tensor::from_parts(out_shape, out);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::config("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        for v in &values[1..] {
            let ok = v.rank() == rank
                && (0..rank).all(|d| d == axis || v.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape("concat", first.shape(), v.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let chunk: Vec<usize> = values.iter().map(|v| v.numel() / outer.max(1)).collect();
        let mut data = Vec::with_capacity(values.iter().map(|v| v.numel()).sum());
        for o in 0..outer {
            for (v, &c) in values.iter().zip(&chunk) {
                data.extend_from_slice(&v.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
        let total: usize = chunk.iter().sum();
        Ok(
            self.op(Tensor::from_parts(shape, data), parts, move |g, need| {
                let mut grads: Vec<Option<Vec<T>>> = need
                    .iter()
                    .zip(&chunk)
                    .map(|(&nd, &c)| nd.then(|| Vec::with_capacity(c * outer)))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total;
                    for (gp, &c) in grads.iter_mut().zip(&chunk) {
                        if let Some(gp) = gp {
                            gp.extend_from_slice(&g.data()[off..off + c]);
                        }
                        off += c;
                    }
                }
                grads
            }),
        )
    }
}
