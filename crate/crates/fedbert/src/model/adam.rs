//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::params::{GradientSet, ParameterSet};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub hyper: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterSet, hyper: AdamHyper) -> Self {
        let m = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let v = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { t: 0, hyper, m, v }
    }

    /// One update: `t += 1`, moments decay toward the gradient, and each
    /// parameter moves by `lr * m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientSet) -> Result<(), ModelError> {
        params.check_layout(grads)?;
        self.t += 1;
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (idx, g) in grads.tensors().iter().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = &mut params.tensor_mut(idx).values;
            for i in 0..g.values.len() {
                let gi = g.values[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut ParameterSet, grads: &GradientSet, state: &mut AdamState) -> Result<(), ModelError> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Tensor;

    fn scalar_set(value: f64) -> ParameterSet {
        ParameterSet::from_tensors(vec![Tensor::new("w", vec![1], vec![value])])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = scalar_set(0.75);
        let grads = scalar_set(0.0);
        let mut state = AdamState::new(&params, AdamHyper::default());
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params.tensor(0).values[0], 0.75);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m̂ = v̂ = 1 after one unit-gradient step, so the move is lr/(1+eps).
        let mut params = scalar_set(1.0);
        let grads = scalar_set(1.0);
        let hyper = AdamHyper { lr: 0.1, ..AdamHyper::default() };
        let mut state = AdamState::new(&params, hyper);
        state.step(&mut params, &grads).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0f64.sqrt() + 1e-8));
        assert!((params.tensor(0).values[0] - expected).abs() < 1e-15);
        assert!((params.tensor(0).values[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn step_is_pure_given_equal_inputs() {
        let grads = scalar_set(0.3);
        let run = || {
            let mut params = scalar_set(2.0);
            let mut state = AdamState::new(&params, AdamHyper::default());
            for _ in 0..5 {
                state.step(&mut params, &grads).unwrap();
            }
            params.tensor(0).values[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_layout_mismatch() {
        let mut params = scalar_set(1.0);
        let grads = ParameterSet::from_tensors(vec![Tensor::new("other", vec![1], vec![0.0])]);
        let mut state = AdamState::new(&params, AdamHyper::default());
        assert!(state.step(&mut params, &grads).is_err());
    }
}
