//! Recorded computation graph and reverse-mode sweep.
//!
//! Ops are recorded eagerly: each builder in [`super::ops`] computes the
//! output value immediately and pushes a node describing how to route
//! gradients to its parents. [`Tape::backward`] then walks the nodes in
//! reverse, accumulating gradients into [`Parameter`] buffers at the leaves.

use super::ops::{self, ConvSpec};
use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Train/inference switch for ops whose behaviour differs (batch norm,
/// dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel moments recorded by batch norm for its backward pass
/// (normalised activations are recomputed from these rather than cached).
pub(crate) struct BnBackCache {
    pub mean: Vec<Real>,
    pub inv_std: Vec<Real>,
    pub channels: usize,
    pub train: bool,
}

pub(crate) enum Op {
    Input,
    Param(Parameter),
    DepthwiseConv { x: Var, k: Var, spec: ConvSpec },
    PointwiseConv { x: Var, k: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BnBackCache },
    /// `mask` already folds in the 1/(1-rate) survivor scaling.
    Dropout { x: Var, mask: Vec<Real> },
    GlobalAvgPool { x: Var },
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    /// Concatenation of two rank-2 tensors along the feature axis.
    ConcatCols { a: Var, b: Var },
    Add { a: Var, b: Var },
    /// Extracts one element of a rank-2 tensor as a scalar.
    Pick { x: Var, row: usize, col: usize },
    /// Scalar loss; the gradient w.r.t. its input was precomputed at
    /// forward time.
    Loss { s: Var, grad_s: Tensor },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
}

/// Recorded forward computation.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    spent: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        value.debug_check_finite("tape node");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input (no gradient is tracked for it).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Records a scalar node whose gradient w.r.t. `s` is already known.
    pub(crate) fn push_loss(&mut self, value: Tensor, s: Var, grad_s: Tensor) -> Var {
        self.push(value, Op::Loss { s, grad_s })
    }

    /// Records a parameter leaf; its value is snapshotted now and gradients
    /// flow back into the parameter's buffer.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push(p.value(), Op::Param(p.clone()))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |value| feeding any rectifier on this tape, or `None` when
    /// no rectifier was recorded.
    ///
    /// Finite-difference audits need every rectifier input to clear the
    /// perturbation radius, otherwise a unit flips state mid-step and the
    /// secant no longer estimates the (one-sided) derivative.
    pub fn relu_input_margin(&self) -> Option<Real> {
        let mut margin: Option<Real> = None;
        for node in &self.nodes {
            if let Op::Relu { x } = node.op {
                let m = self.nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .fold(Real::MAX, |acc, v| acc.min(v.abs()));
                margin = Some(margin.map_or(m, |cur| cur.min(m)));
            }
        }
        margin
    }

    /// Reverse sweep from the scalar `loss` node. Populates the gradient of
    /// every trainable [`Parameter`] that participated in the forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_impl(loss)?;
        Ok(())
    }

    /// Like [`Tape::backward`], but also returns the gradient arriving at
    /// every node (`None` where no gradient flowed). Used by Grad-CAM and
    /// the gradient audits.
    pub fn backward_with_node_grads(&mut self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        self.backward_impl(loss)
    }

    fn backward_impl(&mut self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backprop requested before a forward pass recorded the computation".into(),
            ));
        }
        if self.spent {
            return Err(Error::State(
                "backprop already ran on this tape; record a fresh forward pass".into(),
            ));
        }
        self.spent = true;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let gout = match grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(p) => {
                    if p.trainable() {
                        p.accumulate_grad(&gout);
                    }
                }
                Op::DepthwiseConv { x, k, spec } => {
                    let (gx, gk) = ops::depthwise_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[k.0].value,
                        *spec,
                        &gout,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *k, gk);
                }
                Op::PointwiseConv { x, k } => {
                    let (gx, gk) = ops::pointwise_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[k.0].value,
                        &gout,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *k, gk);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (gx, ggamma, gbeta) = ops::batch_norm_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[gamma.0].value,
                        cache,
                        &gout,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::Dropout { x, mask } => {
                    let mut gx = gout.clone();
                    for (v, s) in gx.data_mut().iter_mut().zip(mask) {
                        *v *= s;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GlobalAvgPool { x } => {
                    let gx = ops::global_avg_pool_backward(&self.nodes[x.0].value, &gout);
                    accumulate(&mut grads, *x, gx);
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let mut gx = Tensor::zeros(self.nodes[x.0].value.shape());
                    for (slot, &src) in argmax.iter().enumerate() {
                        gx.data_mut()[src] += gout.data()[slot];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) = ops::dense_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        &gout,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = gout.clone();
                    for (g, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[i].value;
                    let mut gx = gout.clone();
                    for (g, &s) in gx.data_mut().iter_mut().zip(y.data()) {
                        *g *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols { a, b } => {
                    let (ga, gb) = ops::concat_cols_backward(
                        &self.nodes[a.0].value,
                        &self.nodes[b.0].value,
                        &gout,
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, gout.clone());
                    accumulate(&mut grads, *b, gout);
                }
                Op::Pick { x, row, col } => {
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.shape()[1];
                    let mut gx = Tensor::zeros(xv.shape());
                    gx.data_mut()[row * cols + col] = gout.data()[0];
                    accumulate(&mut grads, *x, gx);
                }
                Op::Loss { s, grad_s } => {
                    let mut gs = grad_s.clone();
                    let scale = gout.data()[0];
                    if scale != 1.0 {
                        for v in gs.data_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, *s, gs);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], at: Var, delta: Tensor) {
    match &mut grads[at.0] {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), delta.shape());
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut tape = Tape::new();
        let err = tape.backward(Var(0)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn backward_twice_is_a_state_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(2.0));
        tape.backward(x).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::State(_))));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Dimension(_))));
    }
}
