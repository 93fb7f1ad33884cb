use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Partition tag carried by every checkpoint entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Decoder,
    Head,
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub kind: ParamKind,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

pub type ParamId = usize;

/// Flat registry of every tensor of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: String, shape: Vec<usize>, role: Role, kind: ParamKind, value: Vec<f32>) -> ParamId {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name, shape, role, kind, value, grad });
        self.params.len() - 1
    }

    /// He-normal convolution weight `[out, in, k, k]`.
    pub fn add_conv_weight(&mut self, name: String, role: Role, shape: [usize; 4], rng: &mut Rng) -> ParamId {
        let fan_in = shape[1] * shape[2] * shape[3];
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let value = (0..shape.iter().product()).map(|_| normal.sample(rng) as f32).collect();
        self.add(name, shape.to_vec(), role, ParamKind::ConvWeight, value)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.params[id].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn add_grad(&mut self, id: ParamId, g: &[f32]) {
        for (a, b) in self.params[id].grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}
