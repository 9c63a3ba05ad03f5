use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            algorithm: Algorithm::Adam,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        OptimConfig { lr, ..Self::default() }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{field}.lr"), "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{field}.{name}"), "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config(format!("{field}.epsilon"), "must be non-negative"));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &OptimConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let denom = v_hat.sqrt() + cfg.epsilon;
        if denom > 0.0 {
            params[i] -= cfg.lr * m_hat / denom;
        }
    }
    Ok(())
}

/// Either optimiser behind one interface.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimConfig,
    state: AdamState,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, n: usize) -> Self {
        Optimizer {
            cfg,
            state: AdamState::new(n),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.cfg.algorithm {
            Algorithm::Adam => adam_step(params, grads, &mut self.state, &self.cfg),
            Algorithm::Sgd => {
                if grads.len() != params.len() {
                    return Err(Error::DimensionMismatch {
                        expected: params.len(),
                        got: grads.len(),
                    });
                }
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.cfg.lr * g;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let exact = OptimConfig { epsilon: 0.0, ..OptimConfig::adam(0.1) };
        for g in [1e-6, 0.3, -5.0, 1e6] {
            let mut p = [2.0];
            adam_step(&mut p, &[g], &mut AdamState::new(1), &exact).unwrap();
            assert!((p[0] - (2.0 - 0.1 * g.signum())).abs() <= 1e-12);
        }
        // With ε > 0 the step shrinks by lr·ε/(|g| + ε).
        let cfg = OptimConfig::adam(0.1);
        let mut p = [0.0];
        adam_step(&mut p, &[0.5], &mut AdamState::new(1), &cfg).unwrap();
        assert!((p[0] + 0.1).abs() <= 0.1 * cfg.epsilon / 0.5 + 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [1.5, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..3 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &OptimConfig::default()).unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn two_steps_match_hand_rolled_reference() {
        // m1 = .5, v1 = .01, m̂ = v̂ = 1 → step .1;
        // m2 = .75, v2 = .0199, m̂ = .75/.75 = 1, v̂ = .0199/.0199 = 1 → step .1.
        let cfg = OptimConfig::adam(0.1);
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        let step = |m_hat: f64, v_hat: f64| 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        let expected = -step(1.0, 1.0) - step(0.75 / 0.75, 0.0199 / (1.0 - 0.99f64.powi(2)));
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + 0.2).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = [0.0, 0.0];
        assert!(adam_step(&mut p, &[1.0], &mut AdamState::new(2), &OptimConfig::default()).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let bad = OptimConfig { beta1: 1.0, ..OptimConfig::default() };
        match bad.validate("optimizer") {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "optimizer.beta1"),
            other => panic!("{other:?}"),
        }
    }
}
