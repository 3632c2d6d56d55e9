//! Central finite-difference gradient audit.
//!
//! The harness perturbs each parameter element by +/- h, re-runs a
//! caller-supplied forward closure, and compares the finite-difference
//! slope against the analytic gradient produced by one backward pass.
//! Relative error is reported per parameter block:
//! `max_i |fd_i - an_i| / max(max|fd|, max|an|, 1e-10)`.

use super::{Parameter, Real, Tensor};
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: Real = 1e-4;

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub id: String,
    pub rel_error: Real,
    pub max_abs_grad: Real,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> Real {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, Real::max)
    }

    pub fn passes(&self, tolerance: Real) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Projects a tape node to a scalar through a fixed pseudo-random linear
/// functional, so layer outputs of any shape can feed the audit.
pub fn project_to_scalar(tape: &mut super::Tape, v: super::Var, seed: u64) -> super::Var {
    use rand::RngExt;
    let val = tape.value(v);
    let mut rng = crate::rng::rng_from(seed, "project", &[]);
    let r: Vec<Real> = (0..val.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let total: Real = val.data().iter().zip(&r).map(|(a, b)| a * b).sum();
    let grad = Tensor::new(val.shape().to_vec(), r).expect("projection shape");
    tape.push_loss(Tensor::scalar(total), v, grad)
}

/// Audits `params` against `forward`, a deterministic closure that evaluates
/// the scalar loss from the parameters' current values (any RNG inside must
/// be fixed-seed so dropout masks and the like are identical across calls).
///
/// The analytic gradient must already be stored on the parameters (run one
/// forward + backward before calling, or pass the same closure's tape
/// output through `Tape::backward`).
pub fn finite_difference_audit(
    params: &[Parameter],
    forward: &mut dyn FnMut() -> Result<Real>,
    step: Real,
) -> Result<GradCheckReport> {
    let mut blocks = Vec::with_capacity(params.len());
    for p in params {
        if !p.trainable() {
            continue;
        }
        let analytic = p
            .grad()
            .unwrap_or_else(|| Tensor::zeros(&p.shape()));
        let base = p.value();
        let n = base.len();
        let mut fd = vec![0.0; n];
        for i in 0..n {
            let mut plus = base.clone();
            plus.data_mut()[i] += step;
            p.set_value(plus)?;
            let lp = forward()?;

            let mut minus = base.clone();
            minus.data_mut()[i] -= step;
            p.set_value(minus)?;
            let lm = forward()?;

            fd[i] = (lp - lm) / (2.0 * step);
        }
        p.set_value(base)?;

        let max_fd = fd.iter().fold(0.0, |m: Real, v| m.max(v.abs()));
        let max_an = analytic.data().iter().fold(0.0, |m: Real, v| m.max(v.abs()));
        let max_diff = fd
            .iter()
            .zip(analytic.data())
            .fold(0.0, |m: Real, (f, a)| m.max((f - a).abs()));
        let denom = max_fd.max(max_an).max(1e-10);
        blocks.push(BlockReport {
            id: p.id(),
            rel_error: max_diff / denom,
            max_abs_grad: max_an,
        });
    }
    Ok(GradCheckReport { blocks })
}

/// Runs the finite-difference audit on every layer type in isolation.
///
/// Each case builds a tiny graph around the layer, projects its output to a
/// scalar, and compares analytic gradients against central differences.
/// Dropout uses a fixed seed so the mask is identical across evaluations.
pub fn audit_layers(seed: u64) -> Result<GradCheckReport> {
    use super::ops::{self, Activation, BatchNormState, LossForm, LossWeights, Padding};
    use super::Mode;
    use super::{Tape, Var};
    use rand::RngExt;

    let mut blocks = Vec::new();

    let rand_t = |shape: &[usize], salt: u64| {
        let mut rng = crate::rng::rng_from(seed, "audit", &[salt]);
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let par = |id: &str, t: Tensor| Parameter::new(id, t, true);

    // Generic runner: builds the graph once for analytic gradients, then
    // re-evaluates the same closure under perturbation.
    let mut run_case = |name: &str,
                        params: Vec<Parameter>,
                        build: &mut dyn FnMut(&mut Tape, &[Var]) -> Result<Var>|
     -> Result<()> {
        let forward_once = |ps: &[Parameter],
                            build: &mut dyn FnMut(&mut Tape, &[Var]) -> Result<Var>|
         -> Result<(Tape, Var)> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
            let loss = build(&mut tape, &vars)?;
            Ok((tape, loss))
        };
        for p in &params {
            p.zero_grad();
        }
        let (mut tape, loss) = forward_once(&params, build)?;
        tape.backward(loss)?;
        let mut forward = || {
            let (tape, loss) = forward_once(&params, build)?;
            tape.value(loss).item()
        };
        let report = finite_difference_audit(&params, &mut forward, DEFAULT_STEP)?;
        for mut b in report.blocks {
            b.id = format!("{name}.{}", b.id);
            blocks.push(b);
        }
        for p in &params {
            p.zero_grad();
        }
        Ok(())
    };

    // depthwise conv, same and valid padding, unit and spatial stride
    for (case, stride, padding) in [
        ("depthwise_same", (1, 1, 1), Padding::Same),
        ("depthwise_same_stride2", (1, 2, 2), Padding::Same),
        ("depthwise_valid", (1, 1, 1), Padding::Valid),
    ] {
        let x = rand_t(&[2, 2, 5, 5, 3], 1);
        let k = par("kernel", rand_t(&[2, 3, 3, 3], 2));
        run_case(case, vec![k], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::conv3d_depthwise(tape, xv, vars[0], stride, padding)?;
            Ok(project_to_scalar(tape, y, seed ^ 1))
        })?;
    }

    {
        let x = rand_t(&[2, 2, 4, 4, 3], 3);
        let k = par("kernel", rand_t(&[1, 1, 1, 3, 4], 4));
        run_case("pointwise", vec![k], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::conv3d_pointwise(tape, xv, vars[0])?;
            Ok(project_to_scalar(tape, y, seed ^ 2))
        })?;
    }

    {
        let x = rand_t(&[3, 2, 3, 3, 2], 5);
        let gamma = par("gamma", rand_t(&[2], 6));
        let beta = par("beta", rand_t(&[2], 7));
        run_case("batch_norm_train", vec![gamma, beta], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let mut st = BatchNormState::new();
            let y = ops::batch_norm(tape, xv, vars[0], vars[1], Mode::Train, &mut st, 1e-5, 0.1)?;
            Ok(project_to_scalar(tape, y, seed ^ 3))
        })?;
    }

    {
        let x = rand_t(&[3, 2, 3, 3, 2], 8);
        let gamma = par("gamma", rand_t(&[2], 9));
        let beta = par("beta", rand_t(&[2], 10));
        let template = BatchNormState {
            running_mean: vec![0.1, -0.2],
            running_var: vec![0.8, 1.3],
            initialized: true,
        };
        run_case("batch_norm_infer", vec![gamma, beta], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let mut st = template.clone();
            let y = ops::batch_norm(tape, xv, vars[0], vars[1], Mode::Infer, &mut st, 1e-5, 0.1)?;
            Ok(project_to_scalar(tape, y, seed ^ 4))
        })?;
    }

    {
        // dropout sits behind a dense layer so a parameter exists to audit;
        // the mask is frozen by the fixed seed
        let x = rand_t(&[4, 6], 11);
        let w = par("weight", rand_t(&[6, 5], 12));
        run_case("dropout_train", vec![w], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let b = tape.input(Tensor::zeros(&[5]));
            let y = ops::dense_affine(tape, xv, vars[0], b)?;
            let d = ops::dropout(tape, y, 0.4, Mode::Train, seed ^ 99)?;
            Ok(project_to_scalar(tape, d, seed ^ 5))
        })?;
    }

    {
        let k = par("kernel", rand_t(&[1, 1, 1, 3, 3], 13));
        let x = rand_t(&[2, 2, 3, 3, 3], 14);
        run_case("global_avg_pool", vec![k], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::conv3d_pointwise(tape, xv, vars[0])?;
            let g = ops::global_avg_pool(tape, y)?;
            Ok(project_to_scalar(tape, g, seed ^ 6))
        })?;
    }

    {
        let k = par("kernel", rand_t(&[1, 1, 1, 2, 2], 15));
        let x = rand_t(&[1, 2, 3, 3, 2], 16);
        run_case("global_max_pool", vec![k], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::conv3d_pointwise(tape, xv, vars[0])?;
            let g = ops::global_max_pool(tape, y)?;
            Ok(project_to_scalar(tape, g, seed ^ 7))
        })?;
    }

    {
        let x = rand_t(&[3, 4], 17);
        let w = par("weight", rand_t(&[4, 3], 18));
        let b = par("bias", rand_t(&[3], 19));
        run_case("dense", vec![w, b], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::dense_affine(tape, xv, vars[0], vars[1])?;
            Ok(project_to_scalar(tape, y, seed ^ 8))
        })?;
    }

    for (case, kind) in [
        ("relu", Activation::Relu),
        ("sigmoid", Activation::Sigmoid),
    ] {
        let x = rand_t(&[3, 4], 20);
        let w = par("weight", rand_t(&[4, 3], 21));
        let b = par("bias", rand_t(&[3], 22));
        run_case(case, vec![w, b], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::dense_affine(tape, xv, vars[0], vars[1])?;
            let a = ops::activation(tape, y, kind)?;
            Ok(project_to_scalar(tape, a, seed ^ 9))
        })?;
    }

    {
        // residual composite: concat of two branches, projection skip, add
        let xa = rand_t(&[2, 3], 23);
        let xb = rand_t(&[2, 3], 24);
        let f1w = par("f1.weight", rand_t(&[6, 4], 25));
        let f1b = par("f1.bias", rand_t(&[4], 26));
        let f2w = par("f2.weight", rand_t(&[4, 4], 27));
        let f2b = par("f2.bias", rand_t(&[4], 28));
        let pw = par("proj.weight", rand_t(&[6, 4], 29));
        let pb = par("proj.bias", rand_t(&[4], 30));
        run_case(
            "residual_dense",
            vec![f1w, f1b, f2w, f2b, pw, pb],
            &mut |tape, vars| {
                let a = tape.input(xa.clone());
                let b = tape.input(xb.clone());
                let x = ops::concat_cols(tape, a, b)?;
                let h = ops::dense_affine(tape, x, vars[0], vars[1])?;
                let h = ops::activation(tape, h, Activation::Relu)?;
                let f = ops::dense_affine(tape, h, vars[2], vars[3])?;
                let skip = ops::dense_affine(tape, x, vars[4], vars[5])?;
                let y = ops::add(tape, skip, f)?;
                Ok(project_to_scalar(tape, y, seed ^ 10))
            },
        )?;
    }

    {
        let x = rand_t(&[4, 5], 31);
        let w = par("weight", rand_t(&[5, 2], 32));
        let b = par("bias", rand_t(&[2], 33));
        let targets = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let weights = LossWeights::new(3.0, 0.9, 0.1).unwrap();
        run_case("weighted_bce", vec![w, b], &mut |tape, vars| {
            let xv = tape.input(x.clone());
            let y = ops::dense_affine(tape, xv, vars[0], vars[1])?;
            let s = ops::activation(tape, y, Activation::Sigmoid)?;
            ops::weighted_bce_loss(tape, s, &targets, &weights, LossForm::Corrected)
        })?;
    }

    Ok(GradCheckReport { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_finite_difference_audit() {
        let report = audit_layers(1234).unwrap();
        assert!(report.blocks.len() >= 15);
        for b in &report.blocks {
            assert!(
                b.rel_error < 1e-4,
                "layer {} rel error {}",
                b.id,
                b.rel_error
            );
        }
    }
}
