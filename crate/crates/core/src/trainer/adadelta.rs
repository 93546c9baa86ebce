//! AdaDelta with an optional global rate multiplier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub eps: f64,
    /// Scales the applied update; the running averages use the raw delta.
    pub lr: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            eps: 1e-6,
            lr: 1.0,
        }
    }
}

impl AdaDeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Running averages E[g^2] and E[delta^2] for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub sq_grad: Vec<f64>,
    pub sq_delta: Vec<f64>,
}

impl AdaDeltaState {
    pub fn zeros(len: usize) -> Self {
        Self {
            sq_grad: vec![0.0; len],
            sq_delta: vec![0.0; len],
        }
    }
}

fn check_finite(name: &str, grads: &[f64]) -> Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient {
            tensor: name.to_string(),
        })
    }
}

/// One elementwise AdaDelta update. Nothing is modified when an error is
/// returned.
pub fn adadelta_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdaDeltaState,
    cfg: &AdaDeltaConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || state.sq_grad.len() != params.len()
        || state.sq_delta.len() != params.len()
    {
        return Err(Error::Shape(format!(
            "`{name}`: params, grads and optimizer state differ in length"
        )));
    }
    check_finite(name, grads)?;
    let (rho, eps) = (cfg.rho, cfg.eps);
    for i in 0..params.len() {
        let g = grads[i];
        let eg = rho * state.sq_grad[i] + (1.0 - rho) * g * g;
        let delta = -((state.sq_delta[i] + eps).sqrt() / (eg + eps).sqrt()) * g;
        state.sq_grad[i] = eg;
        state.sq_delta[i] = rho * state.sq_delta[i] + (1.0 - rho) * delta * delta;
        params[i] += cfg.lr * delta;
    }
    Ok(())
}

/// AdaDelta over every named tensor of a model, skipping frozen prefixes.
#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub config: AdaDeltaConfig,
    frozen: Vec<String>,
    state: BTreeMap<String, AdaDeltaState>,
}

impl AdaDelta {
    pub fn new(config: AdaDeltaConfig) -> Self {
        Self {
            config,
            frozen: Vec::new(),
            state: BTreeMap::new(),
        }
    }

    /// Tensors named `{prefix}.*` are never updated.
    pub fn freeze(&mut self, prefix: &str) {
        self.frozen.push(format!("{prefix}."));
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Applies one update from `grads`, which must mirror `params`. All
    /// gradients are checked before any tensor is touched.
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut named: Vec<(String, &Tensor)> = Vec::new();
        grads.visit("", &mut |name, t| named.push((name.to_string(), t)));
        for (name, g) in &named {
            if !self.is_frozen(name) {
                check_finite(name, &g.data)?;
            }
        }
        let mut idx = 0;
        let mut failure = None;
        params.visit_mut("", &mut |name, t| {
            let (gname, g) = &named[idx];
            idx += 1;
            debug_assert_eq!(name, gname);
            if failure.is_some() || self.is_frozen(name) {
                return;
            }
            let state = self
                .state
                .entry(name.to_string())
                .or_insert_with(|| AdaDeltaState::zeros(t.len()));
            if let Err(e) = adadelta_step(name, &mut t.data, &g.data, state, &self.config) {
                failure = Some(e);
            }
        });
        failure.map_or(Ok(()), Err)
    }
}
