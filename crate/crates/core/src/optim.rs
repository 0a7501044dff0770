//! AdamW with decoupled weight decay and per-group learning rates.
//!
//! Two parameter groups: the encoder, and everything downstream of it
//! (task queries, attention projections, heads). The downstream rate can be
//! derived from the query-count scaling rule `lr0 * B * q / sqrt(d)`. Both
//! rates decay by `decay_rate` at every epoch boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{group_of, ModelConfig, ModelParams, ParamGrads, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub encoder_lr: f64,
    /// Used for the transformer group when `lr_scale` is off.
    pub transformer_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Derive the transformer rate from `lr_t0 * batch_size * task_count / sqrt(model_dim)`.
    pub lr_scale: bool,
    pub lr_t0: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            encoder_lr: 1e-3,
            transformer_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_rate: 0.75,
            epochs: 40,
            batch_size: 32,
            lr_scale: true,
            lr_t0: 1.5625e-5,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_lr", self.encoder_lr),
            ("transformer_lr", self.transformer_lr),
            ("lr_t0", self.lr_t0),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.eps < 0.0 {
            return Err(Error::Config("weight_decay and eps must be nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Initial learning rate for each parameter group.
    pub fn group_rates(&self, model: &ModelConfig) -> Result<GroupRates> {
        let transformer = if self.lr_scale {
            scaled_lr(self.lr_t0, self.batch_size, model.task_count, model.model_dim)?
        } else {
            self.transformer_lr
        };
        Ok(GroupRates {
            encoder: self.encoder_lr,
            transformer,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub encoder: f64,
    pub transformer: f64,
}

impl GroupRates {
    pub fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Transformer => self.transformer,
        }
    }
}

/// Learning rate scaled by query count, batch size and model width.
pub fn scaled_lr(lr0: f64, batch_size: usize, queries: usize, model_dim: usize) -> Result<f64> {
    if lr0.is_nan() || lr0 <= 0.0 || batch_size == 0 || queries == 0 || model_dim == 0 {
        return Err(Error::Config(format!(
            "scaled_lr needs positive inputs (lr0={lr0}, B={batch_size}, q={queries}, d={model_dim})"
        )));
    }
    Ok(lr0 * batch_size as f64 * queries as f64 / (model_dim as f64).sqrt())
}

pub fn epoch_lr(base: f64, decay_rate: f64, epoch: usize) -> f64 {
    base * decay_rate.powi(epoch as i32)
}

/// Moment estimates, step counter and epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    m: ModelParams,
    v: ModelParams,
    pub step: u64,
    pub epoch: usize,
}

impl OptimState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: ModelParams::zeros(params.config),
            v: ModelParams::zeros(params.config),
            step: 0,
            epoch: 0,
        }
    }

    pub fn next_epoch(&mut self) {
        self.epoch += 1;
    }
}

/// One AdamW update of a flat tensor. `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    t: u64,
    config: &OptimConfig,
) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + config.eps)) + lr * config.weight_decay * param[i];
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: OptimConfig,
    pub rates: GroupRates,
}

impl AdamW {
    pub fn new(config: OptimConfig, model: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let rates = config.group_rates(model)?;
        Ok(Self { config, rates })
    }

    pub fn current_lr(&self, group: ParamGroup, state: &OptimState) -> f64 {
        epoch_lr(self.rates.for_group(group), self.config.decay_rate, state.epoch)
    }

    /// Applies one update. Parameters are left untouched if any gradient is non-finite.
    pub fn step(&self, params: &mut ModelParams, grads: &ParamGrads, state: &mut OptimState) -> Result<()> {
        if grads.config != params.config || state.m.config != params.config {
            return Err(Error::Config("gradient/state shapes do not match parameters".into()));
        }
        if let Some((name, _)) = grads
            .tensors()
            .iter()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteGradient(name));
        }
        state.step += 1;
        let t = state.step;
        let lrs: Vec<f64> = params
            .tensors()
            .iter()
            .map(|(name, _)| self.current_lr(group_of(name), state))
            .collect();
        let grads = grads.tensors();
        let OptimState { m, v, .. } = state;
        for ((((name, p), (_, g)), ((_, m), (_, v))), lr) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(m.tensors_mut().into_iter().zip(v.tensors_mut()))
            .zip(lrs)
        {
            debug_assert_eq!(p.len(), g.len(), "{name}");
            adamw_update(p, g, m, v, lr, t, &self.config);
        }
        Ok(())
    }
}
