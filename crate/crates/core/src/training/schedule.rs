use serde::{Deserialize, Serialize};

/// `base_lr * (1 + cos(pi * step / total_steps)) / 2`; no warmup, no
/// restarts.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(total_steps >= 1 && step <= total_steps, "cosine_lr: need 0 <= step <= total_steps, total_steps >= 1");
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

impl Schedule {
    pub fn lr(self, step: usize, total_steps: usize, base_lr: f64) -> f64 {
        match self {
            Schedule::Constant => base_lr,
            Schedule::Cosine => cosine_lr(step, total_steps, base_lr),
        }
    }
}
