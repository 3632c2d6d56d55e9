//! Stochastic gradient descent with classic momentum.
//!
//! Update rule per parameter: `v <- momentum * v + g; w <- w - lr * v`.
//! Velocity is kept per parameter id and survives checkpointing.

use std::collections::BTreeMap;

use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Sgd {
    pub learning_rate: Real,
    pub momentum: Real,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: Real, momentum: Real) -> Result<Self> {
        if learning_rate < 0.0 {
            return Err(Error::Argument(format!(
                "learning rate must be >= 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    /// Applies one update to every trainable parameter that has a gradient,
    /// then clears the gradients it consumed.
    pub fn step(&mut self, params: &[Parameter]) {
        for p in params {
            if !p.trainable() {
                continue;
            }
            let Some(grad) = p.grad() else { continue };
            let v = self
                .velocity
                .entry(p.id())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            for (vv, g) in v.data_mut().iter_mut().zip(grad.data()) {
                *vv = self.momentum * *vv + g;
            }
            p.apply_delta(v.data(), -self.learning_rate);
            p.zero_grad();
        }
    }

    pub fn velocities(&self) -> &BTreeMap<String, Tensor> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, id: String, v: Tensor) {
        self.velocity.insert(id, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(vals: &[Real]) -> Parameter {
        Parameter::new("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap(), true)
    }

    fn set_grad(p: &Parameter, g: &[Real]) {
        p.zero_grad();
        p.accumulate_grad(&Tensor::new(vec![g.len()], g.to_vec()).unwrap());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let p = param(&[1.0, -2.0]);
        let mut opt = Sgd::new(0.0, 0.9).unwrap();
        set_grad(&p, &[10.0, 10.0]);
        opt.step(&[p.clone()]);
        assert_eq!(p.value().data(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_step_matches_definition() {
        let p = param(&[1.0]);
        let mut opt = Sgd::new(0.5, 0.0).unwrap();
        set_grad(&p, &[3.0]);
        opt.step(&[p.clone()]);
        assert_eq!(p.value().data(), &[1.0 - 0.5 * 3.0]);
    }

    #[test]
    fn three_step_trajectory_matches_scalar_recurrence() {
        let p = param(&[0.7]);
        let (lr, mu) = (0.1, 0.9);
        let mut opt = Sgd::new(lr, mu).unwrap();
        let grads = [1.0, -2.0, 0.5];

        // independent scalar recurrence: v <- mu*v + g; w <- w - lr*v
        let mut w = 0.7;
        let mut v = 0.0;
        for g in grads {
            v = mu * v + g;
            w -= lr * v;
        }

        for g in grads {
            set_grad(&p, &[g]);
            opt.step(&[p.clone()]);
        }
        assert!((p.value().data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn non_trainable_parameters_are_skipped() {
        let frozen = Parameter::new("f", Tensor::new(vec![1], vec![5.0]).unwrap(), false);
        frozen.accumulate_grad(&Tensor::new(vec![1], vec![1.0]).unwrap());
        let mut opt = Sgd::new(1.0, 0.0).unwrap();
        opt.step(&[frozen.clone()]);
        assert_eq!(frozen.value().data(), &[5.0]);
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(Sgd::new(-0.1, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
