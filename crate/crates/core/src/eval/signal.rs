//! Score-series post-processing: normalisation, the two smoothing filters,
//! and ROC machinery for automated thresholding.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Per-series min-max normalisation; a constant series maps to all zeros.
pub fn minmax_normalize(xs: &[Real]) -> Vec<Real> {
    if xs.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = xs
        .iter()
        .fold((Real::MAX, Real::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    if hi == lo {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

// ---------------------------------------------------------------------------
// Butterworth low-pass
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct C64 {
    re: Real,
    im: Real,
}

impl C64 {
    fn new(re: Real, im: Real) -> Self {
        C64 { re, im }
    }
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: C64) -> C64 {
        C64::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn div(self, o: C64) -> C64 {
        let d = o.re * o.re + o.im * o.im;
        C64::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
}

/// Expands a monic polynomial from its roots; returns real coefficients in
/// descending powers (length roots + 1).
fn poly_from_roots(roots: &[C64]) -> Vec<Real> {
    let mut coeffs = vec![C64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![C64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] = next[i].add(c);
            next[i + 1] = next[i + 1].sub(c.mul(*r));
        }
        coeffs = next;
    }
    coeffs.iter().map(|c| c.re).collect()
}

/// Digital Butterworth low-pass coefficients (b, a) via the bilinear
/// transform with frequency pre-warping. `cutoff` is in cycles per sample,
/// 0 < cutoff < 0.5. DC gain is exactly 1 by construction.
pub fn butterworth_coeffs(order: usize, cutoff: Real) -> Result<(Vec<Real>, Vec<Real>)> {
    if order == 0 {
        return Err(Error::Argument("filter order must be positive".into()));
    }
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::Argument(format!(
            "cutoff must lie in (0, 0.5) cycles/frame, got {cutoff}"
        )));
    }
    let warped = 2.0 * (std::f64::consts::PI * cutoff).tan();
    let n = order;
    // analog prototype poles scaled to the warped cutoff, then mapped by
    // z = (2 + p) / (2 - p)
    let mut zpoles = Vec::with_capacity(n);
    for k in 0..n {
        let theta = std::f64::consts::PI * (2.0 * k as Real + n as Real + 1.0) / (2.0 * n as Real);
        let p = C64::new(warped * theta.cos(), warped * theta.sin());
        let two = C64::new(2.0, 0.0);
        zpoles.push(two.add(p).div(two.sub(p)));
    }
    let zzeros = vec![C64::new(-1.0, 0.0); n];
    let a = poly_from_roots(&zpoles);
    let b_raw = poly_from_roots(&zzeros);
    // normalise DC gain to exactly one
    let gain = a.iter().sum::<Real>() / b_raw.iter().sum::<Real>();
    let b: Vec<Real> = b_raw.iter().map(|v| v * gain).collect();
    Ok((b, a))
}

/// Squared magnitude response of the digital filter at `freq` cycles/sample
/// (analytic oracle for attenuation checks).
pub fn butterworth_magnitude_sq(order: usize, cutoff: Real, freq: Real) -> Real {
    // |H(e^{j w})|^2 = 1 / (1 + (tan(w/2) / tan(wc/2))^(2n)) for the
    // bilinear-transformed Butterworth
    let ratio = (std::f64::consts::PI * freq).tan() / (std::f64::consts::PI * cutoff).tan();
    1.0 / (1.0 + ratio.powi(2 * order as i32))
}

/// Steady-state initial filter state so a step input produces no transient
/// (direct form II transposed).
fn steady_state_zi(b: &[Real], a: &[Real]) -> Vec<Real> {
    let n = a.len();
    if n == 1 {
        return Vec::new();
    }
    // solve (I - A^T) zi = b[1:] - a[1:] * b[0], A the companion matrix of a
    let m = n - 1;
    let mut mat = vec![vec![0.0; m]; m];
    for (i, row) in mat.iter_mut().enumerate() {
        row[0] = a[i + 1];
        if i + 1 < m {
            row[i + 1] = -1.0;
        }
        row[i] += 1.0;
    }
    let mut rhs: Vec<Real> = (0..m).map(|i| b[i + 1] - a[i + 1] * b[0]).collect();
    // gaussian elimination with partial pivoting
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&r1, &r2| mat[r1][col].abs().partial_cmp(&mat[r2][col].abs()).unwrap())
            .unwrap();
        mat.swap(col, pivot);
        rhs.swap(col, pivot);
        let p = mat[col][col];
        for r in col + 1..m {
            let f = mat[r][col] / p;
            for c in col..m {
                mat[r][c] -= f * mat[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut zi = vec![0.0; m];
    for r in (0..m).rev() {
        let mut acc = rhs[r];
        for c in r + 1..m {
            acc -= mat[r][c] * zi[c];
        }
        zi[r] = acc / mat[r][r];
    }
    zi
}

/// Direct form II transposed filter with initial state `zi` (scaled by the
/// caller).
fn lfilter(b: &[Real], a: &[Real], xs: &[Real], zi: &[Real]) -> Vec<Real> {
    let mut z = zi.to_vec();
    z.resize(a.len() - 1, 0.0);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let y = b[0] * x + z.first().copied().unwrap_or(0.0);
        for i in 0..z.len() {
            let next = if i + 1 < z.len() { z[i + 1] } else { 0.0 };
            z[i] = b[i + 1] * x + next - a[i + 1] * y;
        }
        out.push(y);
    }
    out
}

/// Mirror padding (edge sample not repeated): for `[a b c d ...]` the front
/// pad of 2 is `[c b]`.
fn mirror_pad(xs: &[Real], pad: usize) -> Vec<Real> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(xs[i.min(n - 1)]);
    }
    out.extend_from_slice(xs);
    for i in 0..pad {
        out.push(xs[n - 2 - i.min(n - 2)]);
    }
    out
}

/// Low-pass Butterworth smoothing.
///
/// `zero_phase` runs the filter forward then backward (no phase lag, onset
/// positions preserved, attenuation applied twice). Edges are mirror-padded
/// by `3 * order` samples and the filter starts from its step steady state.
pub fn butterworth_smooth(
    xs: &[Real],
    order: usize,
    cutoff: Real,
    zero_phase: bool,
) -> Result<Vec<Real>> {
    if xs.len() <= 3 * order {
        return Err(Error::Argument(format!(
            "series of {} samples too short for order {order} (needs > {})",
            xs.len(),
            3 * order
        )));
    }
    let (b, a) = butterworth_coeffs(order, cutoff)?;
    let zi = steady_state_zi(&b, &a);
    let pad = 3 * order;
    let padded = mirror_pad(xs, pad);
    let run = |data: &[Real]| {
        let scaled: Vec<Real> = zi.iter().map(|v| v * data[0]).collect();
        lfilter(&b, &a, data, &scaled)
    };
    let mut y = run(&padded);
    if zero_phase {
        y.reverse();
        y = run(&y);
        y.reverse();
    }
    Ok(y[pad..pad + xs.len()].to_vec())
}

// ---------------------------------------------------------------------------
// Savitzky-Golay
// ---------------------------------------------------------------------------

/// Central Savitzky-Golay smoothing weights for the given window and
/// polynomial order.
fn savgol_weights(window: usize, polyorder: usize) -> Vec<Real> {
    let m = (window / 2) as isize;
    let p = polyorder;
    // normal equations G c = e0 with G_{ab} = sum_j j^(a+b)
    let dim = p + 1;
    let mut g = vec![vec![0.0; dim]; dim];
    for j in -m..=m {
        let mut powers = vec![1.0; 2 * p + 1];
        for q in 1..=2 * p {
            powers[q] = powers[q - 1] * j as Real;
        }
        for a in 0..dim {
            for b in 0..dim {
                g[a][b] += powers[a + b];
            }
        }
    }
    let mut rhs = vec![0.0; dim];
    rhs[0] = 1.0;
    // gaussian elimination
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&r1, &r2| g[r1][col].abs().partial_cmp(&g[r2][col].abs()).unwrap())
            .unwrap();
        g.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in col + 1..dim {
            let f = g[r][col] / g[col][col];
            for c in col..dim {
                g[r][c] -= f * g[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut coef = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut acc = rhs[r];
        for c in r + 1..dim {
            acc -= g[r][c] * coef[c];
        }
        coef[r] = acc / g[r][r];
    }
    (-m..=m)
        .map(|j| {
            let mut acc = 0.0;
            let mut jp = 1.0;
            for c in coef.iter().take(dim) {
                acc += c * jp;
                jp *= j as Real;
            }
            acc
        })
        .collect()
}

/// Local least-squares polynomial smoothing with reflective edges.
pub fn savgol_smooth(xs: &[Real], window: usize, polyorder: usize) -> Result<Vec<Real>> {
    if window % 2 == 0 || window <= polyorder {
        return Err(Error::Argument(format!(
            "savgol window must be odd and exceed the polynomial order, got ({window}, {polyorder})"
        )));
    }
    if window == 1 {
        return Ok(xs.to_vec());
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let half = window / 2;
    let w = savgol_weights(window, polyorder);
    let padded = mirror_pad(xs, half);
    Ok((0..xs.len())
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(j, &wj)| wj * padded[i + j])
                .sum()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// ROC
// ---------------------------------------------------------------------------

/// Rank-based ROC AUC with tie correction. Returns `(auc, degenerate)`;
/// when only one class is present the AUC defaults to 0.5 and `degenerate`
/// is set.
pub fn roc_auc_checked(scores: &[Real], labels: &[bool]) -> (Real, bool) {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return (0.5, true);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    // average ranks across ties (1-based)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as Real / 2.0 + 1.0;
        for &ix in &order[i..=j] {
            if labels[ix] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as Real / 2.0;
    (u / (pos as Real * neg as Real), false)
}

/// Rank-based AUC; degenerate label sets return 0.5.
pub fn roc_auc(scores: &[Real], labels: &[bool]) -> Real {
    roc_auc_checked(scores, labels).0
}

/// Threshold selection policy for turning scores into detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Maximise Youden's J = TPR - FPR over observed scores.
    Youden,
    Fixed(Real),
}

/// Picks the classification threshold (predicate `score >= tau`).
///
/// Youden ties resolve to the lowest optimal threshold, i.e. the lower edge
/// of the optimal region.
pub fn auto_threshold(scores: &[Real], labels: &[bool], policy: ThresholdPolicy) -> Real {
    match policy {
        ThresholdPolicy::Fixed(v) => v,
        ThresholdPolicy::Youden => {
            let (pos, neg) = labels.iter().fold((0usize, 0usize), |(p, n), &l| {
                if l {
                    (p + 1, n)
                } else {
                    (p, n + 1)
                }
            });
            if pos == 0 || neg == 0 {
                return 0.5;
            }
            let mut order: Vec<usize> = (0..scores.len()).collect();
            // descending by score
            order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());
            let mut best_tau = scores[order[0]];
            let mut best_j = Real::MIN;
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut i = 0;
            while i < order.len() {
                let tau = scores[order[i]];
                // count everything tied at this score as classified positive
                let mut j = i;
                loop {
                    if labels[order[j]] {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                    if j + 1 < order.len() && scores[order[j + 1]] == tau {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let youden = tp as Real / pos as Real - fp as Real / neg as Real;
                // strict >=: equal J at a lower tau wins
                if youden >= best_j {
                    best_j = youden;
                    best_tau = tau;
                }
                i = j + 1;
            }
            best_tau
        }
    }
}
