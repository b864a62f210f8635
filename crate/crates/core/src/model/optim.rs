use super::params::ModelParams;
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Scalar> AdamWState<F> {
    pub fn new(len: usize) -> Self {
        AdamWState {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay: parameters first shrink by
/// `lr·wd·θ`, then take the bias-corrected adaptive step.
pub fn adamw_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamWState<F>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("optimizer buffers do not match the parameters".into()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let decay = F::one() - F::of(lr * cfg.weight_decay);
    let step = F::of(lr / bc1);
    let inv_bc2 = F::of(1.0 / bc2);
    let eps = F::of(cfg.eps);
    for (((p, &g), m), v) in params
        .data
        .iter_mut()
        .zip(&grads.data)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *p *= decay;
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
    }
    Ok(())
}
