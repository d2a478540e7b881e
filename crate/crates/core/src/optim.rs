//! Adam with bias correction. Moment decays 0.9 / 0.999, epsilon 1e-8;
//! the learning rate comes from the run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update with bias correction at (1-based) step `step`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, step: u64) {
        assert_eq!(params.len(), self.m.len(), "adam state shape");
        assert_eq!(grads.len(), self.m.len(), "gradient shape");
        let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Optimizer state for the three networks plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub denoiser: AdamState,
    pub mask_encoder: AdamState,
    pub signal_decoder: AdamState,
}

impl OptimizerState {
    pub fn zeros(denoiser_len: usize, mask_len: usize, sig_len: usize) -> Self {
        OptimizerState {
            step: 0,
            denoiser: AdamState::zeros(denoiser_len),
            mask_encoder: AdamState::zeros(mask_len),
            signal_decoder: AdamState::zeros(sig_len),
        }
    }

    pub fn check_shapes(&self, denoiser_len: usize, mask_len: usize, sig_len: usize) -> Result<()> {
        if self.denoiser.len() != denoiser_len
            || self.mask_encoder.len() != mask_len
            || self.signal_decoder.len() != sig_len
        {
            return Err(Error::Checkpoint(
                "optimizer state shapes do not match parameters".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut st = AdamState::zeros(3);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        st.update(&mut p, &[0.3, -0.1, 2.0], 0.0, 1);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut st = AdamState::zeros(2);
        let mut p = vec![0.0, 0.0];
        st.update(&mut p, &[1.0, -1.0], 0.1, 1);
        // bias-corrected first step has magnitude ~ lr
        assert!((p[0] + 0.1).abs() < 1e-6, "{p:?}");
        assert!((p[1] - 0.1).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn repeated_steps_converge_on_quadratic() {
        // minimize (p - 3)^2
        let mut st = AdamState::zeros(1);
        let mut p = vec![0.0];
        for step in 1..=2000 {
            let g = 2.0 * (p[0] - 3.0);
            st.update(&mut p, &[g], 0.05, step);
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "p = {}", p[0]);
    }
}
