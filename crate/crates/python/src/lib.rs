//! Python bindings exposing the main exprspot types and operations.
//!
//! Build the extension module with
//! `cargo build -p exprspot-python --release --features extension-module`,
//! then import the renamed cdylib as `exprspot_python` (see
//! `python/smoke_test.py`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use exprspot_core::dataset::{self, ExprClass, SkipConfig};
use exprspot_core::error::Error;
use exprspot_core::eval::{self, signal, Interval};
use exprspot_core::model::{self, ModelConfig, SpotterNet as CoreNet};
use exprspot_core::preprocess::{self, Image, LcnParams};
use exprspot_core::synth::{self, SynthConfig};
use exprspot_core::tensor::{Mode, Tape};

fn py_err(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::State(_) | Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn image_from(data: Vec<f64>, height: usize, width: usize) -> PyResult<Image> {
    Image::new(height, width, data).map_err(py_err)
}

fn parse_class(class: &str) -> PyResult<ExprClass> {
    match class.to_ascii_uppercase().as_str() {
        "ME" => Ok(ExprClass::Me),
        "MAE" => Ok(ExprClass::Mae),
        other => Err(PyValueError::new_err(format!(
            "unknown class {other:?} (expected ME or MAE)"
        ))),
    }
}

/// Local contrast normalisation `(f - mean) / max(std, c)`.
#[pyfunction]
#[pyo3(signature = (data, height, width, sigma=2.0, radius=7))]
fn lcn_normalize(
    data: Vec<f64>,
    height: usize,
    width: usize,
    sigma: f64,
    radius: usize,
) -> PyResult<Vec<f64>> {
    let img = image_from(data, height, width)?;
    let out = preprocess::lcn_normalize(&img, &LcnParams { sigma, radius }).map_err(py_err)?;
    Ok(out.data)
}

/// Local Gaussian mean and standard-deviation maps.
#[pyfunction]
#[pyo3(signature = (data, height, width, sigma=2.0, radius=7))]
fn gaussian_local_stats(
    data: Vec<f64>,
    height: usize,
    width: usize,
    sigma: f64,
    radius: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let img = image_from(data, height, width)?;
    let (mean, std) =
        preprocess::gaussian_local_stats(&img, &LcnParams { sigma, radius }).map_err(py_err)?;
    Ok((mean.data, std.data))
}

/// Rank-based ROC AUC (tie-corrected); single-class labels give 0.5.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(signal::roc_auc(&scores, &labels))
}

/// Threshold maximising Youden's J (TPR - FPR) under `score >= tau`.
#[pyfunction]
fn youden_threshold(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(signal::auto_threshold(
        &scores,
        &labels,
        signal::ThresholdPolicy::Youden,
    ))
}

/// Zero-phase-capable Butterworth low-pass smoothing.
#[pyfunction]
#[pyo3(signature = (xs, order=2, cutoff=0.05, zero_phase=true))]
fn butterworth_smooth(xs: Vec<f64>, order: usize, cutoff: f64, zero_phase: bool) -> PyResult<Vec<f64>> {
    signal::butterworth_smooth(&xs, order, cutoff, zero_phase).map_err(py_err)
}

/// Savitzky-Golay local polynomial smoothing.
#[pyfunction]
#[pyo3(signature = (xs, window=31, polyorder=3))]
fn savgol_smooth(xs: Vec<f64>, window: usize, polyorder: usize) -> PyResult<Vec<f64>> {
    signal::savgol_smooth(&xs, window, polyorder).map_err(py_err)
}

/// Per-series min-max normalisation (constant series become zeros).
#[pyfunction]
fn minmax_normalize(xs: Vec<f64>) -> Vec<f64> {
    signal::minmax_normalize(&xs)
}

/// Maximal runs of `score >= tau` as (onset, offset) pairs, inclusive.
#[pyfunction]
fn extract_intervals(xs: Vec<f64>, tau: f64) -> Vec<(usize, usize)> {
    eval::extract_intervals(&xs, tau, ExprClass::Me)
        .into_iter()
        .map(|iv| (iv.onset, iv.offset))
        .collect()
}

/// Transitive merge of intervals separated by at most `max_gap` frames.
#[pyfunction]
fn merge_intervals(intervals: Vec<(usize, usize)>, max_gap: usize) -> PyResult<Vec<(usize, usize)>> {
    let ivs: Vec<Interval> = intervals
        .into_iter()
        .map(|(a, b)| Interval::new(a, b, ExprClass::Me).map_err(py_err))
        .collect::<PyResult<_>>()?;
    Ok(eval::merge_intervals(&ivs, max_gap)
        .into_iter()
        .map(|iv| (iv.onset, iv.offset))
        .collect())
}

/// (TP, FP, FN) under greedy one-to-one IoU matching at threshold `j`.
#[pyfunction]
#[pyo3(signature = (pred, gt, j=0.5))]
fn iou_match_counts(
    pred: Vec<(usize, usize)>,
    gt: Vec<(usize, usize)>,
    j: f64,
) -> PyResult<(usize, usize, usize)> {
    let mk = |pairs: Vec<(usize, usize)>| -> PyResult<Vec<Interval>> {
        pairs
            .into_iter()
            .map(|(a, b)| Interval::new(a, b, ExprClass::Me).map_err(py_err))
            .collect()
    };
    let result = eval::iou_match(&mk(pred)?, &mk(gt)?, j);
    Ok((result.tp, result.fp, result.fn_))
}

/// Skip length from the odd-forced rounded mean expression duration.
#[pyfunction]
fn compute_kth_skip(manifest_path: PathBuf, class: &str) -> PyResult<usize> {
    let m = dataset::load_manifest(&manifest_path).map_err(py_err)?;
    dataset::compute_kth_skip(&m, parse_class(class)?).map_err(py_err)
}

/// Movement-to-neutral frame ratio for one subject.
#[pyfunction]
fn move_to_neutral_ratio(manifest_path: PathBuf, subject: &str) -> PyResult<f64> {
    let m = dataset::load_manifest(&manifest_path).map_err(py_err)?;
    dataset::move_to_neutral_ratio(&m, subject).map_err(py_err)
}

/// Leave-one-subject-out splits as (test_subject, train_subjects) pairs.
#[pyfunction]
fn loso_splits(manifest_path: PathBuf) -> PyResult<Vec<(String, Vec<String>)>> {
    let m = dataset::load_manifest(&manifest_path).map_err(py_err)?;
    Ok(dataset::loso_splits(&m)
        .map_err(py_err)?
        .into_iter()
        .map(|s| (s.test_subject, s.train_subjects))
        .collect())
}

/// Generates a small synthetic dataset; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, subjects=2, videos_per_subject=1, frames=200, fps=30.0, image_size=48, seed=0))]
fn generate_synthetic(
    out_dir: PathBuf,
    subjects: usize,
    videos_per_subject: usize,
    frames: usize,
    fps: f64,
    image_size: usize,
    seed: u64,
) -> PyResult<String> {
    let cfg = SynthConfig {
        subjects,
        videos_per_subject,
        frames_per_video: frames,
        fps,
        image_size: (image_size, image_size),
        seed,
        ..SynthConfig::default()
    };
    synth::generate(&cfg, &out_dir).map_err(py_err)?;
    Ok(out_dir.join("manifest.csv").display().to_string())
}

/// Max relative error of the per-layer finite-difference gradient audit.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradient_audit_max_error(seed: u64) -> PyResult<f64> {
    let report = exprspot_core::tensor::gradcheck::audit_layers(seed).map_err(py_err)?;
    Ok(report.max_rel_error())
}

/// The two-stream shared-weight spotting network.
#[pyclass]
struct SpotterNet {
    net: CoreNet,
    input_size: usize,
}

#[pymethods]
impl SpotterNet {
    #[new]
    #[pyo3(signature = (seed=0, input_size=112, use_lcn=true))]
    fn new(seed: u64, input_size: usize, use_lcn: bool) -> PyResult<Self> {
        let cfg = ModelConfig {
            input_size: (input_size, input_size),
            use_lcn_layer: use_lcn,
            ..ModelConfig::default()
        };
        let net = CoreNet::build(cfg, seed).map_err(py_err)?;
        Ok(SpotterNet {
            net,
            input_size,
        })
    }

    /// Trainable parameter count.
    fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    /// Scores one window (flat image arrays). `train=True` uses batch
    /// statistics and updates the running ones; inference needs statistics
    /// to exist (train once or load a checkpoint first).
    #[pyo3(signature = (current, ref_short, ref_long, train=false))]
    fn forward_window(
        &mut self,
        current: Vec<f64>,
        ref_short: Vec<f64>,
        ref_long: Vec<f64>,
        train: bool,
    ) -> PyResult<(f64, f64)> {
        let n = self.input_size;
        let cur = image_from(current, n, n)?;
        let rs = image_from(ref_short, n, n)?;
        let rl = image_from(ref_long, n, n)?;
        let s1 = model::assemble_stream(&[(&rs, &cur)]).map_err(py_err)?;
        let s2 = model::assemble_stream(&[(&rl, &cur)]).map_err(py_err)?;
        let mode = if train { Mode::Train } else { Mode::Infer };
        let mut tape = Tape::new();
        let trace = self
            .net
            .forward_batch(&mut tape, s1, s2, mode, 0)
            .map_err(py_err)?;
        let out = tape.value(trace.scores).data();
        Ok((out[0], out[1]))
    }

    /// Per-frame (me, mae) scores for one video of a manifest.
    #[pyo3(signature = (manifest_path, video_id, skip1, skip2))]
    fn predict_video(
        &self,
        manifest_path: PathBuf,
        video_id: &str,
        skip1: usize,
        skip2: usize,
    ) -> PyResult<Vec<(f64, f64)>> {
        let m = dataset::load_manifest(&manifest_path).map_err(py_err)?;
        let source = dataset::DiskFrameSource::new(self.input_size, self.input_size);
        let skips = SkipConfig::Manual {
            stream1: skip1,
            stream2: skip2,
        };
        let series = self
            .net
            .predict_video(&m, &source, video_id, &skips)
            .map_err(py_err)?;
        Ok(series.me.into_iter().zip(series.mae).collect())
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = self.net.to_checkpoint(None);
        exprspot_core::checkpoint::save_checkpoint(&ckpt, &path).map_err(py_err)
    }

    fn load_checkpoint(&mut self, path: PathBuf) -> PyResult<()> {
        let ckpt = exprspot_core::checkpoint::load_checkpoint(&path).map_err(py_err)?;
        self.net.load_from_checkpoint(&ckpt).map_err(py_err)?;
        Ok(())
    }
}

/// Summary counts of a manifest, for quick inspection.
#[pyfunction]
fn manifest_summary(manifest_path: PathBuf) -> PyResult<BTreeMap<String, usize>> {
    let m = dataset::load_manifest(Path::new(&manifest_path)).map_err(py_err)?;
    let mut out = BTreeMap::new();
    out.insert("subjects".into(), m.subjects().len());
    out.insert("videos".into(), m.videos.len());
    out.insert("annotations".into(), m.annotations.len());
    out.insert(
        "me_annotations".into(),
        m.annotations.iter().filter(|a| a.expr_class == ExprClass::Me).count(),
    );
    out.insert(
        "mae_annotations".into(),
        m.annotations.iter().filter(|a| a.expr_class == ExprClass::Mae).count(),
    );
    Ok(out)
}

#[pymodule]
fn exprspot_python(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(lcn_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_local_stats, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(youden_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(butterworth_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(savgol_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(extract_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(merge_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(iou_match_counts, m)?)?;
    m.add_function(wrap_pyfunction!(compute_kth_skip, m)?)?;
    m.add_function(wrap_pyfunction!(move_to_neutral_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(loso_splits, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_audit_max_error, m)?)?;
    m.add_function(wrap_pyfunction!(manifest_summary, m)?)?;
    m.add_class::<SpotterNet>()?;
    Ok(())
}
