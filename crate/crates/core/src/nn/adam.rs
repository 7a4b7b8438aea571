use serde::{Deserialize, Serialize};

use super::params::{Gradients, ModelParams, ParamRole};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl OptimizerState {
    /// Zeroed moments with lr 1e-3, decoupled weight decay 0.01.
    pub fn new(params: &ModelParams) -> Self {
        Self::with_hyper(params, 1e-3, 0.01)
    }

    pub fn with_hyper(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        OptimizerState {
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step_count: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// One Adam step with bias correction. Weight decay is decoupled
/// (`w -= lr * wd * w`, applied before the moment update) and touches weight
/// matrices only.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if !grads.is_congruent(params)
        || !state.first_moment.is_congruent(params)
        || !state.second_moment.is_congruent(params)
    {
        return Err(Error::Shape("optimizer tensors are not congruent with the model".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (lr, wd, b1, b2, eps) = (state.lr, state.weight_decay, state.beta1, state.beta2, state.adam_eps);
    let decay = 1.0 - lr * wd;

    let mut ms = state.first_moment.slices_mut();
    let mut vs = state.second_moment.slices_mut();
    for (((role, p), g), (m, v)) in
        params.trainable_mut().into_iter().zip(grads.slices()).zip(ms.iter_mut().zip(vs.iter_mut()))
    {
        let decays = role == ParamRole::Weight && wd != 0.0;
        for i in 0..p.len() {
            if decays {
                p[i] *= decay;
            }
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
