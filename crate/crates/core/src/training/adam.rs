//! Adam with coupled L2 weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::params::ModelParameters;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param` before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-6 }
    }
}

/// Moments for every parameter, keyed like the parameters, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParameters<T>, config: AdamConfig) -> Self {
        let zeros: BTreeMap<String, Vec<T>> =
            params.iter().map(|(k, p)| (k.clone(), vec![T::zero(); p.tensor.numel()])).collect();
        Self { config, t: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update of every parameter. Fails without touching
/// anything if a gradient is missing, misshapen, or non-finite.
pub fn adam_step<T: Real>(
    params: &mut ModelParameters<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::Config(format!("no gradient for `{name}`")))?;
        if g.len() != p.tensor.numel() || state.m.get(name).map(Vec::len) != Some(g.len()) {
            return Err(Error::invalid("adam_step", format!("gradient or moment size mismatch for `{name}`")));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` is {} at element {i}", g[i])));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps, weight_decay } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let wf = w.as_f64();
            let gf = gi.as_f64() + weight_decay * wf;
            let mf = beta1 * mi.as_f64() + (1.0 - beta1) * gf;
            let vf = beta2 * vi.as_f64() + (1.0 - beta2) * gf * gf;
            *mi = T::from_f64(mf);
            *vi = T::from_f64(vf);
            *w = T::from_f64(wf - lr * (mf / c1) / ((vf / c2).sqrt() + eps));
        }
    }
    Ok(())
}
