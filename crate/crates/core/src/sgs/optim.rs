use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// First and second moments per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// Adam with decoupled weight decay: `θ ← θ(1 − lr·wd)`, then the
/// bias-corrected Adam step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    /// Updates every parameter not marked in `frozen`, then zeroes all
    /// gradients. Non-finite gradients abort before anything changes.
    pub fn step(&self, params: &mut ParamSet, state: &mut OptimizerState, lr: f64, frozen: &[bool]) -> Result<()> {
        for (name, g) in params.names().iter().zip(params.grads()) {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if state.m.len() != params.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2_sqrt = (1.0 - self.beta2.powi(t)).sqrt();
        let (values, grads) = params.values_and_grads_mut();
        for (i, (theta, g)) in values.iter_mut().zip(grads.iter()).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
            for (j, (th, &gj)) in theta.data_mut().iter_mut().zip(g.data()).enumerate() {
                *th *= 1.0 - lr * self.weight_decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let denom = v[j].sqrt() / bc2_sqrt + self.eps;
                *th -= lr / bc1 * m[j] / denom;
            }
        }
        params.zero_grads();
        Ok(())
    }
}
