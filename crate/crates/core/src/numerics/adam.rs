use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::{RdmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Parameters without an entry in `grads` are treated as having a zero
/// gradient; their moments still decay.
pub fn adam_step(params: &mut ParamStore, grads: &GradMap, state: &mut AdamState) -> Result<()> {
    if state.step >= u32::MAX as u64 {
        return Err(RdmError::contract("adam step counter exhausted"));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| RdmError::contract(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(RdmError::contract(format!(
                "gradient shape {:?} != parameter shape {:?} for {name}",
                g.shape(),
                p.shape()
            )));
        }
    }
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let shape = params.get(name).unwrap().shape().to_vec();
        if state.m.get(name).is_none() {
            state.m.insert(name.clone(), Tensor::zeros(&shape))?;
            state.v.insert(name.clone(), Tensor::zeros(&shape))?;
        }
        if state.m.get(name).unwrap().shape() != shape.as_slice() {
            return Err(RdmError::contract(format!("moment shape mismatch for {name}")));
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for name in &names {
        let g = grads.get(name);
        let m = state.m.get_mut(name).unwrap().data_mut();
        let v = state.v.get_mut(name).unwrap().data_mut();
        let p = params.get_mut(name).unwrap().data_mut();
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
