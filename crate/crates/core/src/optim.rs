//! First-order optimizers keyed by parameter slot.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::ParamSlot;

/// SGD with (heavy-ball) momentum: `v <- mu * v + g; p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<ParamSlot, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, slot: ParamSlot, values: &mut [f64], grad: &[f64]) {
        self.step_with_lr(slot, values, grad, self.lr);
    }

    pub fn step_with_lr(&mut self, slot: ParamSlot, values: &mut [f64], grad: &[f64], lr: f64) {
        let v = self.velocity.entry(slot).or_insert_with(|| vec![0.0; values.len()]);
        for ((p, vi), g) in values.iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = self.momentum * *vi + g;
            *p -= lr * *vi;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adam with bias correction and its own learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hyper: AdamHyper,
    state: HashMap<ParamSlot, AdamState>,
}

impl Adam {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, slot: ParamSlot, values: &mut [f64], grad: &[f64]) {
        let h = self.hyper;
        let s = self.state.entry(slot).or_insert_with(|| AdamState {
            m: vec![0.0; values.len()],
            v: vec![0.0; values.len()],
            t: 0,
        });
        s.t += 1;
        let c1 = 1.0 - h.beta1.powi(s.t);
        let c2 = 1.0 - h.beta2.powi(s.t);
        for (i, (p, g)) in values.iter_mut().zip(grad).enumerate() {
            s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
            s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = s.m[i] / c1;
            let v_hat = s.v[i] / c2;
            *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
}
