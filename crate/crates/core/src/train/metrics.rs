use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Accuracy and support-weighted F1 over binary labels. A class with no
/// support contributes F1 0 at weight 0.
pub fn metrics(preds: &[u8], labels: &[u8]) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::config(format!(
            "metrics need equal non-empty inputs, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.iter().chain(labels).any(|&v| v > 1) {
        return Err(Error::config("metrics expect binary labels"));
    }
    let n = labels.len() as u128;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    // Σ_c support_c · F1_c / n as one integer ratio, so the result is the
    // correctly rounded value.
    let (mut num, mut den) = (0u128, 1u128);
    for class in [0u8, 1] {
        let (mut tp, mut fp, mut fn_) = (0u128, 0u128, 0u128);
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == class, l == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let d = 2 * tp + fp + fn_;
        if d == 0 {
            continue;
        }
        num = num * d + (tp + fn_) * 2 * tp * den;
        den *= d;
    }
    Ok(Metrics {
        accuracy: correct as f64 / n as f64,
        weighted_f1: num as f64 / (den * n) as f64,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}
