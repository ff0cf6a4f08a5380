//! Bias-corrected Adam.

use alloc::format;

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(like: &ModelParams, config: AdamConfig) -> Self {
        AdamState {
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            step_count: 0,
            config,
        }
    }

    /// Clears the moments and the step counter, keeping the hyperparameters.
    pub fn reset(&mut self) {
        self.first_moment.values_mut().for_each(|v| *v = 0.0);
        self.second_moment.values_mut().for_each(|v| *v = 0.0);
        self.step_count = 0;
    }

    /// In-place update used on the training hot path.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        params.ensure_same_shape(grads, "adam gradients")?;
        params.ensure_same_shape(&self.first_moment, "adam state")?;
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (((p, &g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.first_moment.values_mut())
            .zip(self.second_moment.values_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}

/// Pure form of one Adam step: returns the updated parameters and state.
pub fn adam_step(
    params: &ModelParams,
    grads: &ModelParams,
    state: &AdamState,
) -> Result<(ModelParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads)?;
    Ok((p, s))
}
