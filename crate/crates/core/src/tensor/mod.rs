//! Dense tensors with reverse-mode gradients for exactly the layer set the
//! spotting network uses.
//!
//! There is deliberately no general autodiff here: the [`tape::Tape`] records
//! a fixed vocabulary of operations ([`tape::Op`]) and knows how to push
//! gradients through each one. Values are `f64` throughout so finite
//! difference audits resolve below 1e-4 relative error.

pub mod gradcheck;
pub mod ops;
pub mod param;
pub mod sgd;
pub mod tape;

pub use param::Parameter;
pub use tape::{Mode, Tape, Var};

use crate::error::{Error, Result};

/// Scalar type used for all network math.
pub type Real = f64;

/// Dense row-major N-dimensional array, rank at most 5.
///
/// The canonical 5-D layout is `[batch, time, height, width, channel]` with
/// the channel axis contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        if shape.len() > 5 {
            return Err(Error::Dimension(format!(
                "rank {} exceeds the supported maximum of 5",
                shape.len()
            )));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} values but {} were supplied",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: Real) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<Real> {
        if self.data.len() != 1 {
            return Err(Error::Dimension(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Errors if any stored value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub(crate) fn debug_check_finite(&self, context: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {context}"
        );
    }
}

/// Extents of a `[batch, time, height, width, channel]` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims5 {
    pub b: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims5 {
    pub fn from_shape(shape: &[usize], what: &str) -> Result<Self> {
        if shape.len() != 5 {
            return Err(Error::Dimension(format!(
                "{what} must be rank 5 [batch, time, height, width, channel], got {shape:?}"
            )));
        }
        Ok(Dims5 {
            b: shape[0],
            t: shape[1],
            h: shape[2],
            w: shape[3],
            c: shape[4],
        })
    }

    pub fn count(&self) -> usize {
        self.b * self.t * self.h * self.w * self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn new_rejects_rank_above_five() {
        assert!(Tensor::new(vec![1, 1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut t = Tensor::zeros(&[3]);
        assert!(t.check_finite("ok").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(t.check_finite("bad").is_err());
    }
}
