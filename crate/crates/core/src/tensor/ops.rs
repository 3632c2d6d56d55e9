//! Layer operations: eager forward kernels plus their backward counterparts.
//!
//! Every builder records onto a [`Tape`] and returns a [`Var`]. The backward
//! kernels are invoked by the tape's reverse sweep.

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{BnBackCache, Op, Tape, Var};
use super::{Dims5, Mode, Real, Tensor};
use crate::error::{Error, Result};

/// Scores are clamped this far away from 0 and 1 before any logarithm.
pub const LOSS_CLAMP: Real = 1e-7;

/// Sigmoid outputs are clamped into the open interval (0, 1) by this margin
/// so saturation never rounds to an exact endpoint in f64.
const SIGMOID_FLOOR: Real = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub stride: (usize, usize, usize),
    pub padding: Padding,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: (1, 1, 1),
            padding: Padding::Same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Weighting of the multi-label cross-entropy: `w` penalises movement
/// predicted as neutral, `m_me`/`m_mae` weight the two classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w: Real,
    pub m_me: Real,
    pub m_mae: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w: 1.0,
            m_me: 1.0,
            m_mae: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(w: Real, m_me: Real, m_mae: Real) -> Result<Self> {
        if w < 0.0 || m_me < 0.0 || m_mae < 0.0 {
            return Err(Error::Argument(format!(
                "loss weights must be nonnegative, got ({w}, {m_me}, {m_mae})"
            )));
        }
        Ok(LossWeights { w, m_me, m_mae })
    }
}

/// Which algebraic form of the weighted loss to use.
///
/// `Corrected` keeps both terms nonnegative. `PaperLiteral` flips the sign
/// of the negative-label term and exists purely for comparison; it is
/// unbounded below and not suitable for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossForm {
    #[default]
    Corrected,
    PaperLiteral,
}

/// Running statistics owned by one batch-norm layer.
#[derive(Debug, Clone, Default)]
pub struct BatchNormState {
    pub running_mean: Vec<Real>,
    pub running_var: Vec<Real>,
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new() -> Self {
        Self::default()
    }
}

fn conv_extent(input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < k {
                return Err(Error::Dimension(format!(
                    "valid padding needs input extent >= kernel extent, got {input} < {k}"
                )));
            }
            Ok(((input - k) / stride + 1, 0))
        }
    }
}

// ---------------------------------------------------------------------------
// depthwise 3-D convolution
// ---------------------------------------------------------------------------

/// Depthwise 3-D convolution: output channel `c` depends only on input
/// channel `c`. Kernel shape is `[kt, kh, kw, c]`.
pub fn conv3d_depthwise(
    tape: &mut Tape,
    x: Var,
    kernel: Var,
    stride: (usize, usize, usize),
    padding: Padding,
) -> Result<Var> {
    let spec = ConvSpec { stride, padding };
    let out = depthwise_forward(tape.value(x), tape.value(kernel), spec)?;
    Ok(tape.push(out, Op::DepthwiseConv { x, k: kernel, spec }))
}

pub(crate) fn depthwise_forward(x: &Tensor, k: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let d = Dims5::from_shape(x.shape(), "depthwise input")?;
    let ks = k.shape();
    if ks.len() != 4 {
        return Err(Error::Dimension(format!(
            "depthwise kernel must be rank 4 [kt, kh, kw, c], got {ks:?}"
        )));
    }
    let (kt, kh, kw, kc) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != d.c {
        return Err(Error::Dimension(format!(
            "depthwise kernel has {kc} channels but input has {}",
            d.c
        )));
    }
    if kt > d.t {
        return Err(Error::Dimension(format!(
            "kernel temporal extent {kt} exceeds input temporal extent {}",
            d.t
        )));
    }
    let (st, sh, sw) = spec.stride;
    let (ot, pt) = conv_extent(d.t, kt, st, spec.padding)?;
    let (oh, ph) = conv_extent(d.h, kh, sh, spec.padding)?;
    let (ow, pw) = conv_extent(d.w, kw, sw, spec.padding)?;

    let mut out = Tensor::zeros(&[d.b, ot, oh, ow, d.c]);
    let xd = x.data();
    let kd = k.data();
    let c = d.c;
    let od = out.data_mut();
    // row-sliced accumulation: for each kernel tap, add the valid stretch of
    // the input row into the output row (inner loops stay bounds-check free)
    for b in 0..d.b {
        for to in 0..ot {
            for kti in 0..kt {
                let ti = (to * st + kti) as isize - pt as isize;
                if ti < 0 || ti >= d.t as isize {
                    continue;
                }
                for ho in 0..oh {
                    for khi in 0..kh {
                        let hi = (ho * sh + khi) as isize - ph as isize;
                        if hi < 0 || hi >= d.h as isize {
                            continue;
                        }
                        let xrow_base =
                            (((b * d.t + ti as usize) * d.h + hi as usize) * d.w) * c;
                        let xrow = &xd[xrow_base..xrow_base + d.w * c];
                        let orow_base = (((b * ot + to) * oh + ho) * ow) * c;
                        let orow = &mut od[orow_base..orow_base + ow * c];
                        for kwi in 0..kw {
                            let kk = &kd[((kti * kh + khi) * kw + kwi) * c..][..c];
                            let (lo, hi_w) = match wo_range(d.w, ow, sw, pw, kwi) {
                                Some(r) => r,
                                None => continue,
                            };
                            for wo in lo..=hi_w {
                                let xoff = (wo * sw + kwi - pw) * c;
                                let ooff = wo * c;
                                let xs = &xrow[xoff..xoff + c];
                                let os = &mut orow[ooff..ooff + c];
                                for ci in 0..c {
                                    os[ci] += xs[ci] * kk[ci];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Valid output range along one spatial axis for kernel offset `k_off`:
/// positions `wo` with `0 <= wo*stride + k_off - pad < extent`.
fn wo_range(
    extent: usize,
    out_extent: usize,
    stride: usize,
    pad: usize,
    k_off: usize,
) -> Option<(usize, usize)> {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    if extent + pad <= k_off {
        return None;
    }
    let hi = ((extent - 1 + pad - k_off) / stride).min(out_extent.saturating_sub(1));
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

pub(crate) fn depthwise_backward(
    x: &Tensor,
    k: &Tensor,
    spec: ConvSpec,
    gout: &Tensor,
) -> (Tensor, Tensor) {
    let d = Dims5::from_shape(x.shape(), "depthwise input").expect("validated in forward");
    let ks = k.shape();
    let (kt, kh, kw) = (ks[0], ks[1], ks[2]);
    let c = d.c;
    let (st, sh, sw) = spec.stride;
    let (ot, pt) = conv_extent(d.t, kt, st, spec.padding).expect("validated");
    let (oh, ph) = conv_extent(d.h, kh, sh, spec.padding).expect("validated");
    let (ow, pw) = conv_extent(d.w, kw, sw, spec.padding).expect("validated");

    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    let xd = x.data();
    let kd = k.data();
    let gd = gout.data();
    let gxd = gx.data_mut();
    let gkd = gk.data_mut();
    for b in 0..d.b {
        for to in 0..ot {
            for kti in 0..kt {
                let ti = (to * st + kti) as isize - pt as isize;
                if ti < 0 || ti >= d.t as isize {
                    continue;
                }
                for ho in 0..oh {
                    for khi in 0..kh {
                        let hi = (ho * sh + khi) as isize - ph as isize;
                        if hi < 0 || hi >= d.h as isize {
                            continue;
                        }
                        let xrow_base =
                            (((b * d.t + ti as usize) * d.h + hi as usize) * d.w) * c;
                        let xrow = &xd[xrow_base..xrow_base + d.w * c];
                        let gxrow = &mut gxd[xrow_base..xrow_base + d.w * c];
                        let grow_base = (((b * ot + to) * oh + ho) * ow) * c;
                        let grow = &gd[grow_base..grow_base + ow * c];
                        for kwi in 0..kw {
                            let koff = ((kti * kh + khi) * kw + kwi) * c;
                            let kk = &kd[koff..koff + c];
                            let gkk = &mut gkd[koff..koff + c];
                            let (lo, hi_w) = match wo_range(d.w, ow, sw, pw, kwi) {
                                Some(r) => r,
                                None => continue,
                            };
                            for wo in lo..=hi_w {
                                let xoff = (wo * sw + kwi - pw) * c;
                                let gs = &grow[wo * c..wo * c + c];
                                let xs = &xrow[xoff..xoff + c];
                                let gxs = &mut gxrow[xoff..xoff + c];
                                for ci in 0..c {
                                    gxs[ci] += kk[ci] * gs[ci];
                                    gkk[ci] += xs[ci] * gs[ci];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

// ---------------------------------------------------------------------------
// pointwise (1x1x1) convolution
// ---------------------------------------------------------------------------

/// Pointwise convolution mixing channels at every position. Kernel shape is
/// `[1, 1, 1, c_in, c_out]`.
pub fn conv3d_pointwise(tape: &mut Tape, x: Var, kernel: Var) -> Result<Var> {
    let out = pointwise_forward(tape.value(x), tape.value(kernel))?;
    Ok(tape.push(out, Op::PointwiseConv { x, k: kernel }))
}

fn pointwise_kernel_dims(k: &Tensor) -> Result<(usize, usize)> {
    let ks = k.shape();
    if ks.len() != 5 || ks[0] != 1 || ks[1] != 1 || ks[2] != 1 {
        return Err(Error::Dimension(format!(
            "pointwise kernel must be rank 5 [1, 1, 1, c_in, c_out], got {ks:?}"
        )));
    }
    Ok((ks[3], ks[4]))
}

pub(crate) fn pointwise_forward(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let d = Dims5::from_shape(x.shape(), "pointwise input")?;
    let (cin, cout) = pointwise_kernel_dims(k)?;
    if cin != d.c {
        return Err(Error::Dimension(format!(
            "pointwise kernel expects {cin} input channels but input has {}",
            d.c
        )));
    }
    let mut out = Tensor::zeros(&[d.b, d.t, d.h, d.w, cout]);
    let kd = k.data();
    let od = out.data_mut();
    if cin == 1 {
        // single input channel: each output row is the scalar times the
        // kernel row
        for (xv, orow) in x.data().iter().zip(od.chunks_exact_mut(cout)) {
            for (ov, &kv) in orow.iter_mut().zip(kd) {
                *ov = xv * kv;
            }
        }
        return Ok(out);
    }
    for (xrow, orow) in x.data().chunks_exact(cin).zip(od.chunks_exact_mut(cout)) {
        for (ci, &xv) in xrow.iter().enumerate() {
            let krow = &kd[ci * cout..(ci + 1) * cout];
            for (ov, &kv) in orow.iter_mut().zip(krow) {
                *ov += xv * kv;
            }
        }
    }
    Ok(out)
}

pub(crate) fn pointwise_backward(x: &Tensor, k: &Tensor, gout: &Tensor) -> (Tensor, Tensor) {
    let (cin, cout) = pointwise_kernel_dims(k).expect("validated in forward");
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    let kd = k.data();
    {
        let gkd = gk.data_mut();
        let gxd = gx.data_mut();
        for ((xrow, gxrow), grow) in x
            .data()
            .chunks_exact(cin)
            .zip(gxd.chunks_exact_mut(cin))
            .zip(gout.data().chunks_exact(cout))
        {
            for ci in 0..cin {
                let krow = &kd[ci * cout..(ci + 1) * cout];
                let gkrow = &mut gkd[ci * cout..(ci + 1) * cout];
                let xv = xrow[ci];
                let mut acc = 0.0;
                for co in 0..cout {
                    acc += krow[co] * grow[co];
                    gkrow[co] += xv * grow[co];
                }
                gxrow[ci] = acc;
            }
        }
    }
    (gx, gk)
}

// ---------------------------------------------------------------------------
// batch normalisation
// ---------------------------------------------------------------------------

/// Per-channel batch normalisation over every non-channel axis.
///
/// Train mode normalises with batch statistics and folds them into
/// `state` as an exponential moving average (`r <- (1-momentum)*r +
/// momentum*batch`, seeded by the first batch). Infer mode uses `state`
/// only.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: Mode,
    state: &mut BatchNormState,
    eps: Real,
    momentum: Real,
) -> Result<Var> {
    if eps <= 0.0 {
        return Err(Error::Argument(format!("batch norm eps must be > 0, got {eps}")));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Argument(format!(
            "batch norm momentum must lie in [0, 1], got {momentum}"
        )));
    }
    let xv = tape.value(x);
    let shape = xv.shape().to_vec();
    if shape.len() < 2 {
        return Err(Error::Dimension(
            "batch norm input must have a channel axis".into(),
        ));
    }
    let c = *shape.last().unwrap();
    let n = xv.len() / c;
    if tape.value(gamma).shape() != [c] || tape.value(beta).shape() != [c] {
        return Err(Error::Dimension(format!(
            "gamma/beta must both have shape [{c}]"
        )));
    }

    let (mean, var) = match mode {
        Mode::Train => channel_moments(xv.data(), c),
        Mode::Infer => {
            if !state.initialized {
                return Err(Error::Config(
                    "batch norm inference requested but running statistics are empty".into(),
                ));
            }
            (state.running_mean.clone(), state.running_var.clone())
        }
    };

    let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let gvals = tape.value(gamma).data().to_vec();
    let bvals = tape.value(beta).data().to_vec();
    let xd = tape.value(x).data();
    // fold the affine transform into per-channel scale and shift
    let scale: Vec<Real> = gvals.iter().zip(&inv_std).map(|(g, is)| g * is).collect();
    let shift: Vec<Real> = bvals
        .iter()
        .zip(&scale)
        .zip(&mean)
        .map(|((b, s), m)| b - s * m)
        .collect();
    let mut data = Vec::with_capacity(xd.len());
    for row in xd.chunks_exact(c) {
        for ci in 0..c {
            data.push(scale[ci] * row[ci] + shift[ci]);
        }
    }
    let out = Tensor::new(shape, data)?;

    if mode == Mode::Train {
        if state.initialized {
            for ci in 0..c {
                state.running_mean[ci] = (1.0 - momentum) * state.running_mean[ci] + momentum * mean[ci];
                state.running_var[ci] = (1.0 - momentum) * state.running_var[ci] + momentum * var[ci];
            }
        } else {
            state.running_mean = mean.clone();
            state.running_var = var;
            state.initialized = true;
        }
    }

    let cache = BnBackCache {
        mean,
        inv_std,
        channels: c,
        train: mode == Mode::Train,
    };
    Ok(tape.push(out, Op::BatchNorm { x, gamma, beta, cache }))
}

/// Biased per-channel mean and variance with the channel axis contiguous.
fn channel_moments(data: &[Real], c: usize) -> (Vec<Real>, Vec<Real>) {
    let n = data.len() / c;
    let mut mean = vec![0.0; c];
    for row in data.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as Real;
    }
    let mut var = vec![0.0; c];
    for row in data.chunks_exact(c) {
        for ((vv, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *vv += d * d;
        }
    }
    for v in &mut var {
        *v /= n as Real;
    }
    (mean, var)
}

pub(crate) fn batch_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    cache: &BnBackCache,
    gout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let c = cache.channels;
    let n = gout.len() / c;
    let gd = gout.data();
    let xd = x.data();
    // xhat is recomputed from the cached moments instead of being stored
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (row, xrow) in gd.chunks_exact(c).zip(xd.chunks_exact(c)) {
        for ci in 0..c {
            let xhat = (xrow[ci] - cache.mean[ci]) * cache.inv_std[ci];
            sum_g[ci] += row[ci];
            sum_gx[ci] += row[ci] * xhat;
        }
    }
    let ggamma = Tensor::new(vec![c], sum_gx.clone()).unwrap();
    let gbeta = Tensor::new(vec![c], sum_g.clone()).unwrap();

    let gvals = gamma.data();
    let mut gxd = Vec::with_capacity(gd.len());
    if cache.train {
        let nf = n as Real;
        for (row, xrow) in gd.chunks_exact(c).zip(xd.chunks_exact(c)) {
            for ci in 0..c {
                let xhat = (xrow[ci] - cache.mean[ci]) * cache.inv_std[ci];
                gxd.push(
                    gvals[ci]
                        * cache.inv_std[ci]
                        * (row[ci] - sum_g[ci] / nf - xhat * sum_gx[ci] / nf),
                );
            }
        }
    } else {
        for row in gd.chunks_exact(c) {
            for ci in 0..c {
                gxd.push(row[ci] * gvals[ci] * cache.inv_std[ci]);
            }
        }
    }
    let gx = Tensor::new(x.shape().to_vec(), gxd).unwrap();
    (gx, ggamma, gbeta)
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); infer mode is the identity.
pub fn dropout(tape: &mut Tape, x: Var, rate: Real, mode: Mode, seed: u64) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Infer || rate == 0.0 {
        // identity: reuse the existing node rather than copying the tensor
        return Ok(x);
    }
    let xv = tape.value(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<Real> = (0..xv.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect();
    let mut out = xv.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok(tape.push(out, Op::Dropout { x, mask }))
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

/// Global average pool: `[b, t, h, w, c] -> [b, c]`, mean over `(t, h, w)`.
pub fn global_avg_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let d = Dims5::from_shape(xv.shape(), "global average pool input")?;
    let span = d.t * d.h * d.w;
    let mut out = Tensor::zeros(&[d.b, d.c]);
    {
        let od = out.data_mut();
        for b in 0..d.b {
            let base = b * span * d.c;
            for (p, row) in xv.data()[base..base + span * d.c].chunks_exact(d.c).enumerate() {
                let _ = p;
                for ci in 0..d.c {
                    od[b * d.c + ci] += row[ci];
                }
            }
            for ci in 0..d.c {
                od[b * d.c + ci] /= span as Real;
            }
        }
    }
    Ok(tape.push(out, Op::GlobalAvgPool { x }))
}

pub(crate) fn global_avg_pool_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    let d = Dims5::from_shape(x.shape(), "gap input").expect("validated");
    let span = (d.t * d.h * d.w) as Real;
    let mut gx = Tensor::zeros(x.shape());
    let gd = gout.data();
    let gxd = gx.data_mut();
    for b in 0..d.b {
        let grow = &gd[b * d.c..(b + 1) * d.c];
        let base = b * (d.t * d.h * d.w) * d.c;
        for row in gxd[base..base + d.t * d.h * d.w * d.c].chunks_exact_mut(d.c) {
            for ci in 0..d.c {
                row[ci] = grow[ci] / span;
            }
        }
    }
    gx
}

/// Global max pool: `[b, t, h, w, c] -> [b, c]`. Ties resolve to the first
/// position in scan order.
pub fn global_max_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let d = Dims5::from_shape(xv.shape(), "global max pool input")?;
    let span = d.t * d.h * d.w;
    let mut out = Tensor::filled(&[d.b, d.c], Real::NEG_INFINITY);
    let mut argmax = vec![0usize; d.b * d.c];
    {
        let od = out.data_mut();
        for b in 0..d.b {
            let base = b * span * d.c;
            for p in 0..span {
                let row = &xv.data()[base + p * d.c..base + (p + 1) * d.c];
                for ci in 0..d.c {
                    if row[ci] > od[b * d.c + ci] {
                        od[b * d.c + ci] = row[ci];
                        argmax[b * d.c + ci] = base + p * d.c + ci;
                    }
                }
            }
        }
    }
    Ok(tape.push(out, Op::GlobalMaxPool { x, argmax }))
}

// ---------------------------------------------------------------------------
// dense, activation, glue
// ---------------------------------------------------------------------------

/// Affine layer `y = x . w + bias` on rank-2 input.
pub fn dense_affine(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let out = dense_forward(tape.value(x), tape.value(weight), tape.value(bias))?;
    Ok(tape.push(out, Op::Dense { x, w: weight, b: bias }))
}

pub(crate) fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::Dimension(format!(
            "dense expects rank-2 input and weight, got {xs:?} and {ws:?}"
        )));
    }
    let (batch, din) = (xs[0], xs[1]);
    let (wd, dout) = (ws[0], ws[1]);
    if din != wd {
        return Err(Error::Dimension(format!(
            "dense inner dimensions disagree: input {din} vs weight {wd}"
        )));
    }
    if b.shape() != [dout] {
        return Err(Error::Dimension(format!(
            "dense bias must have shape [{dout}], got {:?}",
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[batch, dout]);
    let wdat = w.data();
    let bdat = b.data();
    let od = out.data_mut();
    for (xrow, orow) in x.data().chunks_exact(din).zip(od.chunks_exact_mut(dout)) {
        orow.copy_from_slice(bdat);
        for (di, &xv) in xrow.iter().enumerate() {
            let wrow = &wdat[di * dout..(di + 1) * dout];
            for (ov, &wv) in orow.iter_mut().zip(wrow) {
                *ov += xv * wv;
            }
        }
    }
    Ok(out)
}

pub(crate) fn dense_backward(x: &Tensor, w: &Tensor, gout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let din = x.shape()[1];
    let dout = w.shape()[1];
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[dout]);
    let wdat = w.data();
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for ((xrow, gxrow), grow) in x
            .data()
            .chunks_exact(din)
            .zip(gxd.chunks_exact_mut(din))
            .zip(gout.data().chunks_exact(dout))
        {
            for (o, &g) in grow.iter().enumerate() {
                gbd[o] += g;
            }
            for di in 0..din {
                let wrow = &wdat[di * dout..(di + 1) * dout];
                let gwrow = &mut gwd[di * dout..(di + 1) * dout];
                let xv = xrow[di];
                let mut acc = 0.0;
                for o in 0..dout {
                    acc += wrow[o] * grow[o];
                    gwrow[o] += xv * grow[o];
                }
                gxrow[di] = acc;
            }
        }
    }
    (gx, gw, gb)
}

fn sigmoid_scalar(x: Real) -> Real {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
}

/// Elementwise activation.
pub fn activation(tape: &mut Tape, x: Var, kind: Activation) -> Result<Var> {
    let xv = tape.value(x);
    let mut out = xv.clone();
    match kind {
        Activation::Relu => {
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            Ok(tape.push(out, Op::Relu { x }))
        }
        Activation::Sigmoid => {
            for v in out.data_mut() {
                *v = sigmoid_scalar(*v);
            }
            Ok(tape.push(out, Op::Sigmoid { x }))
        }
    }
}

pub fn relu(tape: &mut Tape, x: Var) -> Result<Var> {
    activation(tape, x, Activation::Relu)
}

pub fn sigmoid(tape: &mut Tape, x: Var) -> Result<Var> {
    activation(tape, x, Activation::Sigmoid)
}

/// Concatenates two rank-2 tensors along the feature axis.
pub fn concat_cols(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    if av.rank() != 2 || bv.rank() != 2 || av.shape()[0] != bv.shape()[0] {
        return Err(Error::Dimension(format!(
            "concat needs rank-2 tensors with matching batch, got {:?} and {:?}",
            av.shape(),
            bv.shape()
        )));
    }
    let (batch, da, db) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    let mut out = Tensor::zeros(&[batch, da + db]);
    {
        let od = out.data_mut();
        for r in 0..batch {
            od[r * (da + db)..r * (da + db) + da]
                .copy_from_slice(&av.data()[r * da..(r + 1) * da]);
            od[r * (da + db) + da..(r + 1) * (da + db)]
                .copy_from_slice(&bv.data()[r * db..(r + 1) * db]);
        }
    }
    Ok(tape.push(out, Op::ConcatCols { a, b }))
}

pub(crate) fn concat_cols_backward(a: &Tensor, b: &Tensor, gout: &Tensor) -> (Tensor, Tensor) {
    let (batch, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for r in 0..batch {
        let grow = &gout.data()[r * (da + db)..(r + 1) * (da + db)];
        ga.data_mut()[r * da..(r + 1) * da].copy_from_slice(&grow[..da]);
        gb.data_mut()[r * db..(r + 1) * db].copy_from_slice(&grow[da..]);
    }
    (ga, gb)
}

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    if av.shape() != bv.shape() {
        return Err(Error::Dimension(format!(
            "add needs identical shapes, got {:?} and {:?}",
            av.shape(),
            bv.shape()
        )));
    }
    let mut out = av.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(bv.data()) {
        *o += v;
    }
    Ok(tape.push(out, Op::Add { a, b }))
}

/// Extracts element `[row, col]` of a rank-2 tensor as a scalar node.
pub fn pick(tape: &mut Tape, x: Var, row: usize, col: usize) -> Result<Var> {
    let xv = tape.value(x);
    if xv.rank() != 2 || row >= xv.shape()[0] || col >= xv.shape()[1] {
        return Err(Error::Dimension(format!(
            "pick({row}, {col}) out of range for shape {:?}",
            xv.shape()
        )));
    }
    let v = xv.data()[row * xv.shape()[1] + col];
    Ok(tape.push(Tensor::scalar(v), Op::Pick { x, row, col }))
}

// ---------------------------------------------------------------------------
// weighted multi-label loss
// ---------------------------------------------------------------------------

/// Weighted multi-label binary cross-entropy, averaged over the batch.
///
/// Per sample and class `i`:
/// `m_i * (-w * t_i * ln s_i - (1 - t_i) * ln(1 - s_i))`, with `s` clamped
/// to `[1e-7, 1 - 1e-7]` before the logarithms. The `PaperLiteral` form
/// flips the sign of the second term.
pub fn weighted_bce_loss(
    tape: &mut Tape,
    s: Var,
    targets: &Tensor,
    weights: &LossWeights,
    form: LossForm,
) -> Result<Var> {
    LossWeights::new(weights.w, weights.m_me, weights.m_mae)?;
    let sv = tape.value(s);
    if sv.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "scores shape {:?} differs from targets shape {:?}",
            sv.shape(),
            targets.shape()
        )));
    }
    if sv.rank() != 2 || sv.shape()[1] != 2 {
        return Err(Error::Dimension(format!(
            "loss expects [batch, 2] scores, got {:?}",
            sv.shape()
        )));
    }
    if targets.data().iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Argument(
            "targets must contain only 0 or 1".into(),
        ));
    }
    let batch = sv.shape()[0];
    let m = [weights.m_me, weights.m_mae];
    let w = weights.w;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(sv.shape());
    {
        let gd = grad.data_mut();
        for (row, (srow, trow)) in sv
            .data()
            .chunks_exact(2)
            .zip(targets.data().chunks_exact(2))
            .enumerate()
        {
            for i in 0..2 {
                let sc = srow[i].clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
                let t = trow[i];
                let (term, dterm) = match form {
                    LossForm::Corrected => (
                        -w * t * sc.ln() - (1.0 - t) * (1.0 - sc).ln(),
                        -w * t / sc + (1.0 - t) / (1.0 - sc),
                    ),
                    LossForm::PaperLiteral => (
                        -w * t * sc.ln() + (1.0 - t) * (1.0 - sc).ln(),
                        -w * t / sc - (1.0 - t) / (1.0 - sc),
                    ),
                };
                total += m[i] * term;
                gd[row * 2 + i] = m[i] * dterm / batch as Real;
            }
        }
    }
    let loss = Tensor::scalar(total / batch as Real);
    loss.check_finite("weighted bce loss")?;
    Ok(tape.push(loss, Op::Loss { s, grad_s: grad }))
}

/// Trainable weight count of a depthwise-plus-pointwise pair.
pub fn separable_param_count(kernel: (usize, usize, usize), c_in: usize, c_out: usize) -> usize {
    let (kt, kh, kw) = kernel;
    kt * kh * kw * c_in + c_in * c_out
}

/// Trainable weight count of the equivalent full 3-D convolution.
pub fn full_conv_param_count(kernel: (usize, usize, usize), c_in: usize, c_out: usize) -> usize {
    let (kt, kh, kw) = kernel;
    kt * kh * kw * c_in * c_out
}
