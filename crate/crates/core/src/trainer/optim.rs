//! Adam with bias correction and global-norm gradient clipping.

use crate::error::{Result, TencaError};
use crate::params::{ModelParams, ParamGradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(TencaError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TencaError::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(TencaError::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = params.clone();
        m.fill(0.0);
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Global L2 norm over every gradient entry.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads.l2_norm()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ParamGradients, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// One Adam update. Non-finite gradients leave both parameters and state
/// untouched and return a numeric error.
pub fn adam_update(
    params: &mut ModelParams,
    grads: &ParamGradients,
    state: &mut OptimizerState,
    config: &AdamConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(TencaError::Contract("adam: parameter/gradient shapes differ".into()));
    }
    config.validate()?;
    if !grads.is_finite() {
        return Err(TencaError::Numeric {
            step: state.step as usize,
            what: "non-finite gradient, update skipped".into(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        eps,
    } = *config;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
