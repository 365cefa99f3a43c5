//! Bias-corrected Adam parameter updates.

use thiserror::Error;

#[derive(Debug, Error)]
#[error("parameter/gradient length mismatch: {params} params, {grads} grads")]
pub struct LengthMismatch {
    pub params: usize,
    pub grads: usize,
}

/// Per-parameter Adam accumulators.
///
/// `step_count` increases by exactly 1 per [`adam_step`] call and drives the
/// bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// State with the conventional defaults: beta1 = 0.9, beta2 = 0.999,
    /// epsilon = 1e-8.
    pub fn new(n_params: usize) -> Self {
        Self::with_betas(n_params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n_params: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected Adam update, applied elementwise in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<(), LengthMismatch> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(LengthMismatch {
            params: params.len().min(state.first_moment.len()),
            grads: grads.len(),
        });
    }
    debug_assert!(lr > 0.0, "learning rate must be positive");
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * grads[i];
        *v = state.beta2 * *v + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
