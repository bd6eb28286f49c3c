use crate::error::Result;
use crate::params::NetworkParams;
use crate::tensor::Tensor;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    first: Vec<Tensor<f32>>,
    second: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, learning_rate: f32) -> Self {
        let zeros = || params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<f32>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<f32>] {
        &self.second
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut NetworkParams, grads: &[Tensor<f32>], state: &mut AdamState) -> Result<()> {
    params.check_matching(grads)?;
    params.check_matching(&state.first)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.eps;
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
