//! Trainable parameters.
//!
//! A [`Parameter`] is a shared handle: cloning it clones the handle, not the
//! value. The two network streams hold clones of the same handles, which is
//! what "shared weights" means here — a write through one view is observed
//! through the other because there is only one object.

use std::sync::{Arc, RwLock};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
struct ParamInner {
    id: String,
    value: Tensor,
    grad: Option<Tensor>,
    trainable: bool,
}

/// Shared handle to a named tensor with an optional gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    inner: Arc<RwLock<ParamInner>>,
}

impl Parameter {
    pub fn new(id: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        Parameter {
            inner: Arc::new(RwLock::new(ParamInner {
                id: id.into(),
                value,
                grad: None,
                trainable,
            })),
        }
    }

    /// Fan-in scaled uniform init for conv/dense weights: U(-a, a) with
    /// a = sqrt(3 / fan_in).
    pub fn uniform_fan_in(
        id: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (3.0 / fan_in.max(1) as Real).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Parameter::new(id, Tensor::new(shape.to_vec(), data).expect("init shape"), true)
    }

    pub fn id(&self) -> String {
        self.inner.read().unwrap().id.clone()
    }

    pub fn trainable(&self) -> bool {
        self.inner.read().unwrap().trainable
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.read().unwrap().value.shape().to_vec()
    }

    /// Snapshot of the current value.
    pub fn value(&self) -> Tensor {
        self.inner.read().unwrap().value.clone()
    }

    pub fn set_value(&self, value: Tensor) -> Result<()> {
        let mut g = self.inner.write().unwrap();
        if value.shape() != g.value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {}: cannot assign shape {:?} over {:?}",
                g.id,
                value.shape(),
                g.value.shape()
            )));
        }
        g.value = value;
        Ok(())
    }

    /// Snapshot of the gradient, if one has been accumulated.
    pub fn grad(&self) -> Option<Tensor> {
        self.inner.read().unwrap().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.write().unwrap().grad = None;
    }

    /// Adds `delta` into the gradient buffer (creating it at zero first).
    pub fn accumulate_grad(&self, delta: &Tensor) {
        let mut g = self.inner.write().unwrap();
        debug_assert_eq!(g.value.shape(), delta.shape());
        match &mut g.grad {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            None => g.grad = Some(delta.clone()),
        }
    }

    /// In-place update `value += scale * delta`, used by optimizers.
    pub fn apply_delta(&self, delta: &[Real], scale: Real) {
        let mut g = self.inner.write().unwrap();
        debug_assert_eq!(g.value.len(), delta.len());
        for (v, d) in g.value.data_mut().iter_mut().zip(delta) {
            *v += scale * d;
        }
    }

    /// True when both handles refer to the same underlying object.
    pub fn same_object(&self, other: &Parameter) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Checks id uniqueness across a model's parameter list.
pub fn check_unique_ids(params: &[Parameter]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for p in params {
        if !seen.insert(p.id()) {
            return Err(Error::Validation(format!("duplicate parameter id {}", p.id())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_is_a_view_not_a_copy() {
        let p = Parameter::new("w", Tensor::zeros(&[2]), true);
        let q = p.clone();
        assert!(p.same_object(&q));
        q.apply_delta(&[1.0, 2.0], 1.0);
        assert_eq!(p.value().data(), &[1.0, 2.0]);
    }

    #[test]
    fn grad_accumulates_across_views() {
        let p = Parameter::new("w", Tensor::zeros(&[2]), true);
        let q = p.clone();
        p.accumulate_grad(&Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        q.accumulate_grad(&Tensor::new(vec![2], vec![0.5, 0.25]).unwrap());
        assert_eq!(p.grad().unwrap().data(), &[1.5, 1.25]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = Parameter::new("w", Tensor::zeros(&[1]), true);
        let b = Parameter::new("w", Tensor::zeros(&[1]), true);
        assert!(check_unique_ids(&[a.clone(), b]).is_err());
        assert!(check_unique_ids(&[a]).is_ok());
    }
}
