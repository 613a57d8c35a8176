//! AdamW with bias correction and decoupled weight decay, and the
//! learning-rate schedule.

use std::f64::consts::PI;

use crate::model::{Layout, TensorKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Weight decay applies only where this is set (weight matrices).
    pub decay: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteGradient {
    pub index: usize,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            decay: vec![true; n],
        }
    }

    /// State whose weight decay is limited to the layout's weight matrices.
    pub fn for_layout(config: AdamWConfig, layout: &Layout) -> Self {
        let mut s = Self::new(config, layout.total);
        for t in &layout.tensors {
            let on = t.kind == TensorKind::Matrix;
            s.decay[t.range()].iter_mut().for_each(|d| *d = on);
        }
        s
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.step = 0;
    }
}

/// One AdamW update. Rejects the step, leaving everything untouched, if any
/// gradient is non-finite.
pub fn optimizer_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), NonFiniteGradient> {
    assert_eq!(params.len(), grads.len(), "parameter/gradient shape mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/state shape mismatch");
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NonFiniteGradient { index });
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let m = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        let v = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let mut p = params[i] as f64;
        if state.decay[i] {
            p -= lr * c.weight_decay * p;
        }
        p -= lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
        params[i] = p as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

/// Linear warmup from 0 to `peak` over the first `warmup_fraction` of the
/// steps, then (for cosine) decay towards 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, peak: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = (warmup_fraction * total_steps as f64).round() as usize;
        Self {
            kind,
            peak,
            total_steps,
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        match self.kind {
            ScheduleKind::Constant => self.peak,
            ScheduleKind::Cosine => {
                let span = (self.total_steps - self.warmup_steps).max(1) as f64;
                let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
                0.5 * self.peak * (1.0 + (PI * progress).cos())
            }
        }
    }
}
