//! Adam with lazy embedding rows, and the warmup/decay schedule.

use super::TrainError;
use crate::encoder::{EncoderParams, GradientSet, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Linear ramp from 0 to `lr` over `warmup` steps, then linear decay to 0 at `total`.
pub fn lr_at(step: usize, lr: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        lr * step as f64 / warmup as f64
    } else if total > warmup {
        lr * total.saturating_sub(step) as f64 / (total - warmup) as f64
    } else {
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    dim: usize,
    m_embed: Vec<f64>,
    v_embed: Vec<f64>,
    m_proj: Vec<f64>,
    v_proj: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &EncoderParams<T>) -> Self {
        Self {
            t: 0,
            dim: params.dim,
            m_embed: vec![0.0; params.embed.len()],
            v_embed: vec![0.0; params.embed.len()],
            m_proj: vec![0.0; params.proj.len()],
            v_proj: vec![0.0; params.proj.len()],
            m_bias: vec![0.0; params.bias.len()],
            v_bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.m_embed, &self.v_embed, &self.m_proj, &self.v_proj, &self.m_bias, &self.v_bias]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct Step {
    lr: f64,
    c1: f64,
    c2: f64,
}

impl Step {
    fn apply<T: Scalar>(&self, p: &mut [T], m: &mut [f64], v: &mut [f64], g: &[f64]) {
        for i in 0..g.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let update = self.lr * (m[i] / self.c1) / ((v[i] / self.c2).sqrt() + EPS);
            let cur = p[i].to_f64().unwrap_or(f64::NAN);
            p[i] = T::from_f64(cur - update).unwrap_or_else(T::nan);
        }
    }
}

/// One bias-corrected Adam update. Embedding rows absent from `grads` keep
/// both their values and their moments.
pub fn adam_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if !grads.is_finite() {
        return Err(TrainError::NonFinite);
    }
    let h = params.dim;
    if grads.dim != h || state.dim != h || state.m_embed.len() != params.embed.len() {
        return Err(TrainError::Shape("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let step = Step {
        lr,
        c1: 1.0 - BETA1.powi(t),
        c2: 1.0 - BETA2.powi(t),
    };
    for (&row, g) in &grads.d_embed {
        let r = row as usize * h..(row as usize + 1) * h;
        if r.end > params.embed.len() {
            return Err(TrainError::Shape(format!("gradient for embedding row {row} out of range")));
        }
        step.apply(&mut params.embed[r.clone()], &mut state.m_embed[r.clone()], &mut state.v_embed[r], g);
    }
    step.apply(&mut params.proj, &mut state.m_proj, &mut state.v_proj, &grads.d_proj);
    step.apply(&mut params.bias, &mut state.m_bias, &mut state.v_bias, &grads.d_bias);
    if !state.is_finite() {
        return Err(TrainError::NonFinite);
    }
    Ok(())
}
