//! Adam with bias correction over an ordered, named parameter list.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// One trainable tensor. Parameters are owned as plain buffers and leafed
/// into a fresh graph every forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers aligned with the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn matches(&self, params: &[Param]) -> bool {
        self.m.len() == params.len()
            && self
                .m
                .iter()
                .zip(params)
                .all(|(m, p)| m.len() == p.numel())
    }
}

/// One Adam step: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `param ← param − lr·m̂/(√v̂ + ε)` with bias-corrected m̂, v̂.
/// Parameters without a gradient this step are left untouched.
pub fn adam_step(
    params: &mut [Param],
    grads: &[Option<&[f32]>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(NnError::shape(
            "adam_step",
            format!(
                "params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - (cfg.beta1 as f64).powf(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powf(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let Some(g) = grad else { continue };
        if g.len() != param.numel() {
            return Err(NnError::shape(
                "adam_step",
                format!("gradient for {} has wrong length", param.name),
            ));
        }
        for i in 0..g.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] as f64 / bc1;
            let v_hat = v[i] as f64 / bc2;
            param.data[i] -= (cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
        }
    }
    Ok(())
}
