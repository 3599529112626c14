use super::{DenseArray, NdError};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Moment estimates for a fixed list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<DenseArray>,
    second: Vec<DenseArray>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[DenseArray]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| DenseArray::zeros(p.shape())).collect(),
            second: params.iter().map(|p| DenseArray::zeros(p.shape())).collect(),
        }
    }

    pub fn first_moments(&self) -> &[DenseArray] {
        &self.first
    }

    pub fn second_moments(&self) -> &[DenseArray] {
        &self.second
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [DenseArray],
    grads: &[DenseArray],
) -> Result<(), NdError> {
    if params.len() != state.first.len() || grads.len() != params.len() {
        return Err(NdError::InvalidArgument(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() {
            return Err(NdError::shape("adam_step", p.shape(), g.shape()));
        }
        if p.shape() != m.shape() {
            return Err(NdError::shape("adam_step", p.shape(), m.shape()));
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
