//! Adam with optional coupled L2 weight decay and global-norm clipping.

use crate::models::SegmentationModel;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(weight_decay: f64, grad_clip: Option<f64>) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, grad_clip, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every trainable tensor the model currently allows to
    /// change. Returns the pre-clip gradient norm.
    pub fn step(&mut self, model: &mut SegmentationModel, lr: f64) -> f64 {
        let allowed: Vec<bool> =
            model.params().iter().map(|p| p.kind.is_trainable() && model.role_trainable(p.role)).collect();
        let store = model.params_mut();
        if self.m.is_empty() {
            self.m = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        let norm = store
            .iter()
            .zip(&allowed)
            .filter(|(_, &a)| a)
            .flat_map(|(p, _)| p.grad.iter())
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt();
        let scale = match self.grad_clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &a), m), v) in store.iter_mut().zip(&allowed).zip(&mut self.m).zip(&mut self.v) {
            if !a {
                continue;
            }
            for i in 0..p.value.len() {
                let g = p.grad[i] as f64 * scale + self.weight_decay * p.value[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p.value[i] = (p.value[i] as f64 - update) as f32;
            }
        }
        norm
    }
}
