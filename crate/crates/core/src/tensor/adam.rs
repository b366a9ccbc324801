use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            config,
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        for len in [params.len(), grads.len(), self.second_moment.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps_hat,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        for i in 0..n {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            params[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps_hat);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(params: &[f64], grads: &[f64], state: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    let mut p = params.to_vec();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::new(3, AdamConfig::default());
        st.first_moment = vec![0.5, -0.2, 0.1];
        st.second_moment = vec![0.0; 3];
        let params = [1.0, 2.0, 3.0];
        // first moment nonzero moves params, so start from zero moments
        let st0 = AdamState::new(3, AdamConfig::default());
        let (p, s) = adam_step(&params, &[0.0; 3], &st0).unwrap();
        assert_eq!(p, params);
        assert_eq!(s.step_count, 1);
        let (_, s) = adam_step(&params, &[0.0; 3], &st).unwrap();
        for (a, b) in s.first_moment.iter().zip(&st.first_moment) {
            assert!(a.abs() < b.abs());
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let st = AdamState::new(1, AdamConfig::default());
        let (p, s) = adam_step(&[0.0], &[1.0], &st).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let st = AdamState::new(2, AdamConfig::default());
        let a = adam_step(&[0.3, -0.7], &[0.1, 0.2], &st).unwrap();
        let b = adam_step(&[0.3, -0.7], &[0.1, 0.2], &st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let st = AdamState::new(2, AdamConfig::default());
        assert!(matches!(
            adam_step(&[0.0], &[0.0, 0.0], &st),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
