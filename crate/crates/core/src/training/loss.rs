//! Cross-entropy + soft Dice on softmax probabilities.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::models::Tensor;

/// Dice smoothing constant.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ce: 1.0, dice: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.ce) || !ok(self.dice) || self.ce + self.dice == 0.0 {
            return Err(TrainError::Config { field: "loss_weights".into(), reason: "weights must be >= 0 and not both zero".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `w_ce * ce + w_dice * dice`
    pub value: f64,
    pub ce: f64,
    pub dice: f64,
    /// d value / d logits, same shape as the logits.
    pub grad: Tensor,
}

/// `w_ce * CE + w_dice * Dice` over a batch of logits `[N, K, H, W]` and
/// targets `N*H*W` (sample-major, row-major).
///
/// CE is the mean over all pixels. Dice is `1 - mean_c (2 I_c + s) / (P_c +
/// Y_c + s)` with sums over the whole batch, averaged over the classes that
/// occur in the targets.
pub fn combined_loss(logits: &Tensor, targets: &[u8], weights: LossWeights) -> Result<LossOutput, TrainError> {
    let (n, k, hw) = (logits.n, logits.c, logits.plane());
    if targets.len() != n * hw {
        return Err(TrainError::Config { field: "targets".into(), reason: format!("expected {} labels, got {}", n * hw, targets.len()) });
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= k) {
        return Err(TrainError::LabelOutOfRange { label: t, num_classes: k });
    }
    if !logits.is_finite() {
        return Err(TrainError::NonFiniteLogits);
    }
    let npix = (n * hw) as f64;
    // softmax probabilities, [N, K, HW] in f64
    let mut prob = vec![0.0f64; logits.data.len()];
    let mut ce = 0.0;
    for i in 0..n {
        let base = i * k * hw;
        for j in 0..hw {
            let mx = (0..k).map(|c| logits.data[base + c * hw + j]).fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0;
            for c in 0..k {
                let e = (logits.data[base + c * hw + j] as f64 - mx).exp();
                prob[base + c * hw + j] = e;
                sum += e;
            }
            for c in 0..k {
                prob[base + c * hw + j] /= sum;
            }
            let t = targets[i * hw + j] as usize;
            ce -= logits.data[base + t * hw + j] as f64 - mx - sum.ln();
        }
    }
    ce /= npix;

    let mut inter = vec![0.0f64; k];
    let mut psum = vec![0.0f64; k];
    let mut ysum = vec![0.0f64; k];
    for i in 0..n {
        for j in 0..hw {
            let t = targets[i * hw + j] as usize;
            for c in 0..k {
                psum[c] += prob[(i * k + c) * hw + j];
            }
            inter[t] += prob[(i * k + t) * hw + j];
            ysum[t] += 1.0;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| ysum[c] > 0.0).collect();
    let m = present.len() as f64;
    let dice = 1.0
        - present.iter().map(|&c| (2.0 * inter[c] + DICE_SMOOTH) / (psum[c] + ysum[c] + DICE_SMOOTH)).sum::<f64>() / m;

    // dL/dp for the Dice term, per class: a_c * y - b_c
    let mut a = vec![0.0f64; k];
    let mut b = vec![0.0f64; k];
    for &c in &present {
        let s = psum[c] + ysum[c] + DICE_SMOOTH;
        a[c] = -weights.dice * 2.0 / (m * s);
        b[c] = -weights.dice * (2.0 * inter[c] + DICE_SMOOTH) / (m * s * s);
    }
    let mut grad = Tensor::zeros(n, k, logits.h, logits.w);
    let mut g = vec![0.0f64; k];
    for i in 0..n {
        for j in 0..hw {
            let t = targets[i * hw + j] as usize;
            let mut pg = 0.0;
            for c in 0..k {
                let y = (c == t) as u8 as f64;
                g[c] = a[c] * y - b[c];
                pg += prob[(i * k + c) * hw + j] * g[c];
            }
            for c in 0..k {
                let idx = (i * k + c) * hw + j;
                let p = prob[idx];
                let y = (c == t) as u8 as f64;
                grad.data[idx] = (weights.ce * (p - y) / npix + p * (g[c] - pg)) as f32;
            }
        }
    }
    Ok(LossOutput { value: weights.ce * ce + weights.dice * dice, ce, dice, grad })
}
