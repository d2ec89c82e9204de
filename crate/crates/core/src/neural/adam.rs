use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::diffmath::{GradientMap, Tensor};
use crate::error::{LatteError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LatteError::config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `params`. Fails without
    /// touching anything when a gradient is missing or misshapen.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &GradientMap) -> Result<()> {
        let mut problem = None;
        params.visit_params(&mut |name, t| {
            if problem.is_some() {
                return;
            }
            match grads.get(name) {
                None => problem = Some(format!("no gradient for parameter {name}")),
                Some(g) if g.shape() != t.shape() => {
                    problem = Some(format!(
                        "gradient for {name} has shape {:?}, parameter has {:?}",
                        g.shape(),
                        t.shape()
                    ))
                }
                _ => {}
            }
        });
        if let Some(msg) = problem {
            return Err(LatteError::contract(msg));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let first = &mut self.first;
        let second = &mut self.second;
        params.visit_params_mut(&mut |name, p| {
            let g = grads.get(name).expect("checked above");
            let m = first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Tensor);

    impl Parameterized for Scalar {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("w", &self.0)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("w", &mut self.0)
        }
    }

    fn grad(values: Vec<f64>) -> GradientMap {
        let mut g = GradientMap::default();
        g.insert("w".into(), Tensor::vector(values));
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Scalar(Tensor::vector(vec![1.0, -2.0]));
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        adam.step(&mut p, &grad(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.0.data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut p = Scalar(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let mut adam = AdamState::new(cfg).unwrap();
        adam.step(&mut p, &grad(vec![3.0, -0.5, 1e-3])).unwrap();
        for (i, &g) in [3.0f64, -0.5, 1e-3].iter().enumerate() {
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.0.data()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_converges() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut p = Scalar(Tensor::vector(vec![0.0]));
        let mut adam = AdamState::new(cfg).unwrap();
        for _ in 0..200 {
            let w = p.0.data()[0];
            adam.step(&mut p, &grad(vec![2.0 * (w - 3.0)])).unwrap();
        }
        assert!((p.0.data()[0] - 3.0).abs() < 0.05, "w = {}", p.0.data()[0]);
    }

    #[test]
    fn first_update_sign_invariant_to_gradient_scale() {
        let g = [0.7, -1.3, 0.02, -4.0];
        let signs = |c: f64| {
            let mut p = Scalar(Tensor::vector(vec![0.0; 4]));
            let mut adam = AdamState::new(AdamConfig::default()).unwrap();
            adam.step(&mut p, &grad(g.iter().map(|v| v * c).collect())).unwrap();
            p.0.data().iter().map(|v| v.signum()).collect::<Vec<_>>()
        };
        let base = signs(1.0);
        for c in [1e-3, 0.5, 10.0, 1e4] {
            assert_eq!(signs(c), base);
        }
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut p = Scalar(Tensor::vector(vec![1.0]));
        let mut adam = AdamState::new(AdamConfig::default()).unwrap();
        let err = adam.step(&mut p, &GradientMap::default());
        assert!(matches!(err, Err(LatteError::Contract(_))));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p.0.data(), &[1.0]);
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let cfg = AdamConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(AdamState::new(cfg).is_err());
    }
}
