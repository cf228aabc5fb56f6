use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

use super::OptimConfig;

/// One AdamW update of a single scalar at step `t` (1-based). Returns the
/// new `(param, m, v)`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_scalar(
    p: f64,
    g: f64,
    m: f64,
    v: f64,
    t: u64,
    lr: f64,
    cfg: &OptimConfig,
    decay: bool,
) -> (f64, f64, f64) {
    let p = if decay {
        p - lr * cfg.weight_decay * p
    } else {
        p
    };
    let m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    let v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
    (p - lr * m_hat / (v_hat.sqrt() + cfg.eps), m, v)
}

/// Which parameters receive weight decay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecayReport {
    pub decayed: Vec<String>,
    pub exempt: Vec<String>,
}

/// AdamW with bias correction and decoupled weight decay. Parameters
/// flagged `decay = false` (norms, biases, tokens, position tables) skip
/// the decay term.
#[derive(Debug, Clone)]
pub struct AdamW<T: Scalar = f32> {
    pub cfg: OptimConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: OptimConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, e)| vec![T::zero(); e.value.numel()])
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn report(store: &ParamStore<T>) -> DecayReport {
        let (mut decayed, mut exempt) = (Vec::new(), Vec::new());
        for (_, e) in store.iter() {
            if e.decay {
                decayed.push(e.name.clone());
            } else {
                exempt.push(e.name.clone());
            }
        }
        DecayReport { decayed, exempt }
    }

    /// Applies one update. `grads` is indexed like the store. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        let mut sq = 0.0;
        for ((_, e), g) in store.iter().zip(grads) {
            if g.shape() != e.value.shape() {
                return Err(Error::shape("adamw", e.value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(e.name.clone()));
            }
            if self.cfg.grad_clip.is_some() {
                sq += g.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
            }
        }
        let clip = match self.cfg.grad_clip {
            Some(max) if sq.sqrt() > max => max / sq.sqrt(),
            _ => 1.0,
        };

        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(c.eps);
        let clip = T::from_f64(clip);
        let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.decay)).collect();
        for ((id, decay), g) in ids.into_iter().zip(grads) {
            let shrink = T::from_f64(if decay {
                1.0 - lr * c.weight_decay
            } else {
                1.0
            });
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.value_mut(id);
            for i in 0..p.len() {
                let gi = g.data()[i] * clip;
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                p[i] = p[i] * shrink - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
