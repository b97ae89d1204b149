use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup into inverse-square-root decay:
/// `base * min(1, s/w) / sqrt(max(s, w))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_rate: f64,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(base_rate: f64, warmup_steps: usize) -> Result<Self> {
        let s = Self {
            base_rate,
            warmup_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) || self.warmup_steps == 0 {
            return Err(Error::InvalidConfig(format!(
                "learning-rate schedule needs base_rate > 0 and warmup_steps > 0, got ({}, {})",
                self.base_rate, self.warmup_steps
            )));
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> Result<f64> {
    if step < 1 {
        return Err(Error::Domain("learning rate is defined for steps >= 1".into()));
    }
    let (s, w) = (step as f64, schedule.warmup_steps as f64);
    Ok(schedule.base_rate * (s / w).min(1.0) / s.max(w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
        }
    }
}

/// Adam with one set of moment accumulators shared by all tasks.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let c1 = 1.0 - self.cfg.beta1.powi(self.t);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.cfg.epsilon * c2.sqrt()) as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

pub fn global_norm(grad: &[f32]) -> f64 {
    grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
}

/// Rescales `grad` to norm `max_norm` when it is larger. Returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f32], max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
