use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Adam hyperparameters. `l2` is applied as decoupled shrinkage after the
/// moment update, never folded into the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == state.m.len(),
        "adam_step: {} params, {} grads, state for {}",
        params.len(),
        grads.len(),
        state.m.len()
    );
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        l2,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        *p -= lr * l2 * *p;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_l2_is_identity() {
        let cfg = AdamConfig {
            l2: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(3, cfg);
        let mut p = vec![0.3, -1.2, 5.0];
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut state).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2, 5.0]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            l2: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(1, cfg);
        let mut p = vec![2.0];
        adam_step(&mut p, &[1.0], &mut state).unwrap();
        // m̂ = v̂ = 1 on the first step.
        let expected = 2.0 - 1e-4 / (1.0 + 1e-8);
        assert_eq!(p[0], expected);
    }

    #[test]
    fn l2_shrinks_after_the_moment_update() {
        let cfg = AdamConfig {
            l2: 0.5,
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(1, cfg);
        let mut p = vec![1.0];
        adam_step(&mut p, &[0.0], &mut state).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let run = || {
            let mut state = AdamState::new(4, AdamConfig::default());
            let mut p = vec![0.1, 0.2, -0.3, 0.4];
            for k in 0..10 {
                let g: Vec<f64> = p.iter().map(|x| x * (k as f64 + 1.0) - 0.05).collect();
                adam_step(&mut p, &g, &mut state).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0; 3];
        assert!(adam_step(&mut p, &[0.0; 3], &mut state).is_err());
    }
}
