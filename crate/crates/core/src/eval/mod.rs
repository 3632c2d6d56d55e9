//! Interval-level and frame-level spotting evaluation.
//!
//! Two post-processing routes over the per-frame score series:
//!
//! - **auto**: min-max normalise, Butterworth low-pass, ROC-based
//!   threshold, extract intervals, IoU-match against ground truth.
//! - **msf** (multi-scale filter): min-max normalise, Savitzky-Golay,
//!   threshold, extract, merge nearby intervals, IoU-match.
//! - **raw**: threshold the unsmoothed scores directly.
//!
//! A predicted interval is a true positive when its inclusive-frame IoU
//! with an unmatched ground-truth interval reaches the configured `J`
//! (default 0.5); assignment is greedy in descending IoU, one-to-one.

pub mod signal;

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{frame_labels, ExprClass, Manifest};
use crate::error::{Error, Result};
use crate::model::ScoreSeries;
use crate::tensor::Real;
pub use signal::ThresholdPolicy;

/// Inclusive frame interval carrying its expression class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Interval {
    pub onset: usize,
    pub offset: usize,
    pub expr_class: ExprClass,
}

impl Interval {
    pub fn new(onset: usize, offset: usize, expr_class: ExprClass) -> Result<Self> {
        if onset > offset {
            return Err(Error::Argument(format!(
                "interval onset {onset} exceeds offset {offset}"
            )));
        }
        Ok(Interval {
            onset,
            offset,
            expr_class,
        })
    }

    pub fn frames(&self) -> usize {
        self.offset - self.onset + 1
    }
}

/// IoU of two inclusive frame intervals.
pub fn interval_iou(a: &Interval, b: &Interval) -> Real {
    let inter_lo = a.onset.max(b.onset);
    let inter_hi = a.offset.min(b.offset);
    let inter = if inter_hi >= inter_lo {
        inter_hi - inter_lo + 1
    } else {
        0
    };
    let union = a.frames() + b.frames() - inter;
    inter as Real / union as Real
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    Auto,
    Msf,
    Raw,
}

impl EvalMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMethod::Auto => "auto",
            EvalMethod::Msf => "msf",
            EvalMethod::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(EvalMethod::Auto),
            "msf" => Ok(EvalMethod::Msf),
            "raw" => Ok(EvalMethod::Raw),
            other => Err(Error::Argument(format!(
                "unknown eval method {other:?} (expected auto, msf or raw)"
            ))),
        }
    }
}

/// Where the ROC threshold is fitted: per video or pooled over all videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdScope {
    PerVideo,
    Global,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub method: EvalMethod,
    pub butter_order: usize,
    /// Cycles per frame.
    pub butter_cutoff: Real,
    pub zero_phase: bool,
    pub savgol_window: usize,
    pub savgol_polyorder: usize,
    /// Maximum gap bridged by interval merging (msf); `None` derives the
    /// stream-1 k-th skip from the manifest.
    pub merge_gap: Option<usize>,
    /// Minimum IoU for a true positive.
    pub iou_threshold: Real,
    pub threshold_policy: ThresholdPolicy,
    pub threshold_scope: ThresholdScope,
    /// Pool TP/FP/FN across classes for the overall F1 (the alternative
    /// averages per-class F1).
    pub pool_classes: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            method: EvalMethod::Auto,
            butter_order: 2,
            butter_cutoff: 0.05,
            zero_phase: true,
            savgol_window: 31,
            savgol_polyorder: 3,
            merge_gap: None,
            iou_threshold: 0.5,
            threshold_policy: ThresholdPolicy::Youden,
            threshold_scope: ThresholdScope::PerVideo,
            pool_classes: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.savgol_window % 2 == 0 || self.savgol_window <= self.savgol_polyorder {
            return Err(Error::Config(format!(
                "savgol window must be odd and exceed the polynomial order, got ({}, {})",
                self.savgol_window, self.savgol_polyorder
            )));
        }
        if !(self.butter_cutoff > 0.0 && self.butter_cutoff < 0.5) {
            return Err(Error::Config(format!(
                "butterworth cutoff must lie in (0, 0.5), got {}",
                self.butter_cutoff
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "IoU threshold must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.butter_order == 0 {
            return Err(Error::Config("butterworth order must be positive".into()));
        }
        Ok(())
    }
}

/// Maximal runs of `score >= tau` become intervals.
pub fn extract_intervals(scores: &[Real], tau: Real, class: ExprClass) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s >= tau {
            start.get_or_insert(i);
        } else if let Some(s0) = start.take() {
            out.push(Interval {
                onset: s0,
                offset: i - 1,
                expr_class: class,
            });
        }
    }
    if let Some(s0) = start {
        out.push(Interval {
            onset: s0,
            offset: scores.len() - 1,
            expr_class: class,
        });
    }
    out
}

/// Transitively merges same-class intervals separated by at most `max_gap`
/// frames. Input order does not matter; output is sorted by onset.
pub fn merge_intervals(xs: &[Interval], max_gap: usize) -> Vec<Interval> {
    let mut sorted = xs.to_vec();
    sorted.sort_by_key(|iv| (iv.expr_class, iv.onset, iv.offset));
    let mut out: Vec<Interval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(prev)
                if prev.expr_class == iv.expr_class
                    && iv.onset.saturating_sub(prev.offset).saturating_sub(1) <= max_gap =>
            {
                prev.offset = prev.offset.max(iv.offset);
            }
            _ => out.push(iv),
        }
    }
    out.sort_by_key(|iv| (iv.onset, iv.offset, iv.expr_class));
    out
}

/// TP/FP/FN counts plus the realised assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// (pred index, gt index) pairs that matched at `IoU >= j`.
    pub assignment: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching in descending IoU; a pair is a true positive
/// when IoU reaches `j`. Unmatched predictions are false positives,
/// unmatched ground truth false negatives.
pub fn iou_match(pred: &[Interval], gt: &[Interval], j: Real) -> MatchResult {
    let mut pairs = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if p.expr_class != g.expr_class {
                continue;
            }
            let iou = interval_iou(p, g);
            if iou >= j {
                pairs.push((iou, pi, gi));
            }
        }
    }
    // descending IoU, deterministic tie-break on indices
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut assignment = Vec::new();
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            assignment.push((pi, gi));
        }
    }
    let tp = assignment.len();
    MatchResult {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
        assignment,
    }
}

/// Precision/recall/F1 over pooled counts. `F1 = 2TP / (2TP + FP + FN)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct CountMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
}

impl CountMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp > 0 {
            tp as Real / (tp + fp) as Real
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as Real / (tp + fn_) as Real
        } else {
            0.0
        };
        let f1 = if 2 * tp + fp + fn_ > 0 {
            2.0 * tp as Real / (2 * tp + fp + fn_) as Real
        } else {
            0.0
        };
        CountMetrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub interval: CountMetrics,
    pub frame: CountMetrics,
    pub auc: Real,
    pub auc_degenerate: bool,
    /// Realised threshold per video (a single `"global"` entry under
    /// global scope).
    pub thresholds: BTreeMap<String, Real>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoDetail {
    pub predicted: Vec<Interval>,
    pub ground_truth: Vec<Interval>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpotReport {
    pub method: String,
    pub iou_threshold: Real,
    pub per_class: BTreeMap<String, ClassReport>,
    pub overall: CountMetrics,
    pub frame_overall: CountMetrics,
    pub missing_videos: Vec<String>,
    pub notes: Vec<String>,
    pub per_video: BTreeMap<String, VideoDetail>,
}

impl SpotReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Ground-truth intervals of one video, straight from the annotations.
pub fn gt_intervals(m: &Manifest, video_id: &str) -> Vec<Interval> {
    let mut out: Vec<Interval> = m
        .annotations
        .iter()
        .filter(|a| a.video_id == video_id)
        .map(|a| Interval {
            onset: a.onset,
            offset: a.offset,
            expr_class: a.expr_class,
        })
        .collect();
    out.sort_by_key(|iv| (iv.onset, iv.offset, iv.expr_class));
    out
}

fn smooth_series(xs: &[Real], cfg: &EvalConfig) -> Result<Vec<Real>> {
    match cfg.method {
        EvalMethod::Raw => Ok(xs.to_vec()),
        EvalMethod::Auto => {
            let normed = signal::minmax_normalize(xs);
            if normed.len() <= 3 * cfg.butter_order {
                return Ok(normed);
            }
            signal::butterworth_smooth(&normed, cfg.butter_order, cfg.butter_cutoff, cfg.zero_phase)
        }
        EvalMethod::Msf => {
            let normed = signal::minmax_normalize(xs);
            if normed.len() < cfg.savgol_window {
                return Ok(normed);
            }
            signal::savgol_smooth(&normed, cfg.savgol_window, cfg.savgol_polyorder)
        }
    }
}

/// The post-processed (normalised + smoothed) signals for one series,
/// as consumed by thresholding; used for plotting.
pub fn processed_signals(s: &ScoreSeries, cfg: &EvalConfig) -> Result<(Vec<Real>, Vec<Real>)> {
    Ok((smooth_series(&s.me, cfg)?, smooth_series(&s.mae, cfg)?))
}

/// Runs the configured pipeline over every score series and aggregates
/// interval- and frame-level metrics. Manifest videos without scores are
/// listed in `missing_videos` (not fatal); score series for unknown videos
/// are an error.
pub fn evaluate(scores: &[ScoreSeries], m: &Manifest, cfg: &EvalConfig) -> Result<SpotReport> {
    cfg.validate()?;
    let mut notes = Vec::new();

    let by_video: BTreeMap<&str, &ScoreSeries> =
        scores.iter().map(|s| (s.video_id.as_str(), s)).collect();
    for s in scores {
        let v = m.video(&s.video_id)?;
        if s.len() != v.frame_count {
            return Err(Error::Validation(format!(
                "score series for {:?} has {} frames, video has {}",
                s.video_id,
                s.len(),
                v.frame_count
            )));
        }
    }
    let missing: Vec<String> = m
        .videos
        .iter()
        .filter(|v| !by_video.contains_key(v.video_id.as_str()))
        .map(|v| v.video_id.clone())
        .collect();

    let merge_gap = match (cfg.method, cfg.merge_gap) {
        (EvalMethod::Msf, Some(g)) => g,
        (EvalMethod::Msf, None) => {
            match crate::dataset::compute_kth_skip(m, ExprClass::Me) {
                Ok(k) => k,
                Err(_) => {
                    notes.push(
                        "no ME annotations to derive merge gap from; merging disabled".into(),
                    );
                    0
                }
            }
        }
        _ => 0,
    };

    let mut per_class = BTreeMap::new();
    let mut pooled = (0usize, 0usize, 0usize);
    let mut frame_pooled = (0usize, 0usize, 0usize);
    let mut per_video: BTreeMap<String, VideoDetail> = BTreeMap::new();
    for s in scores {
        per_video.insert(
            s.video_id.clone(),
            VideoDetail {
                predicted: Vec::new(),
                ground_truth: gt_intervals(m, &s.video_id),
            },
        );
    }
    let mut class_f1s = Vec::new();

    for class in [ExprClass::Me, ExprClass::Mae] {
        // smooth every series once
        let mut processed: BTreeMap<&str, Vec<Real>> = BTreeMap::new();
        for s in scores {
            processed.insert(&s.video_id, smooth_series(s.class_scores(class), cfg)?);
        }
        // labels per video
        let mut labels: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for s in scores {
            let l = frame_labels(m, &s.video_id)?;
            labels.insert(
                &s.video_id,
                match class {
                    ExprClass::Me => l.me,
                    ExprClass::Mae => l.mae,
                },
            );
        }

        // thresholds
        let mut thresholds: BTreeMap<String, Real> = BTreeMap::new();
        match cfg.threshold_scope {
            ThresholdScope::Global => {
                let mut all_scores = Vec::new();
                let mut all_labels = Vec::new();
                for s in scores {
                    all_scores.extend_from_slice(&processed[s.video_id.as_str()]);
                    all_labels.extend_from_slice(&labels[s.video_id.as_str()]);
                }
                let tau = signal::auto_threshold(&all_scores, &all_labels, cfg.threshold_policy);
                thresholds.insert("global".into(), tau);
            }
            ThresholdScope::PerVideo => {
                for s in scores {
                    let tau = signal::auto_threshold(
                        &processed[s.video_id.as_str()],
                        &labels[s.video_id.as_str()],
                        cfg.threshold_policy,
                    );
                    thresholds.insert(s.video_id.clone(), tau);
                }
            }
        }
        let tau_for = |video: &str| -> Real {
            match cfg.threshold_scope {
                ThresholdScope::Global => thresholds["global"],
                ThresholdScope::PerVideo => thresholds[video],
            }
        };

        // interval metrics
        let mut counts = (0usize, 0usize, 0usize);
        let mut frame_counts = (0usize, 0usize, 0usize);
        let mut auc_scores = Vec::new();
        let mut auc_labels = Vec::new();
        for s in scores {
            let proc = &processed[s.video_id.as_str()];
            let lab = &labels[s.video_id.as_str()];
            let tau = tau_for(&s.video_id);
            let mut pred = extract_intervals(proc, tau, class);
            if cfg.method == EvalMethod::Msf && merge_gap > 0 {
                pred = merge_intervals(&pred, merge_gap);
            }
            let gt: Vec<Interval> = gt_intervals(m, &s.video_id)
                .into_iter()
                .filter(|iv| iv.expr_class == class)
                .collect();
            let result = iou_match(&pred, &gt, cfg.iou_threshold);
            counts.0 += result.tp;
            counts.1 += result.fp;
            counts.2 += result.fn_;
            per_video
                .get_mut(&s.video_id)
                .expect("inserted above")
                .predicted
                .extend(pred.iter().copied());

            for (i, (&sc, &l)) in proc.iter().zip(lab.iter()).enumerate() {
                let _ = i;
                let predicted = sc >= tau;
                match (predicted, l) {
                    (true, true) => frame_counts.0 += 1,
                    (true, false) => frame_counts.1 += 1,
                    (false, true) => frame_counts.2 += 1,
                    (false, false) => {}
                }
            }
            auc_scores.extend_from_slice(proc);
            auc_labels.extend(lab.iter().copied());
        }
        let (auc, degenerate) = signal::roc_auc_checked(&auc_scores, &auc_labels);
        if degenerate {
            notes.push(format!(
                "{} labels contain a single class; AUC defaulted to 0.5",
                class.as_str()
            ));
        }
        let interval = CountMetrics::from_counts(counts.0, counts.1, counts.2);
        class_f1s.push(interval.f1);
        pooled.0 += counts.0;
        pooled.1 += counts.1;
        pooled.2 += counts.2;
        frame_pooled.0 += frame_counts.0;
        frame_pooled.1 += frame_counts.1;
        frame_pooled.2 += frame_counts.2;
        per_class.insert(
            class.as_str().to_lowercase(),
            ClassReport {
                interval,
                frame: CountMetrics::from_counts(frame_counts.0, frame_counts.1, frame_counts.2),
                auc,
                auc_degenerate: degenerate,
                thresholds,
            },
        );
    }

    let mut overall = CountMetrics::from_counts(pooled.0, pooled.1, pooled.2);
    if !cfg.pool_classes {
        let avg = class_f1s.iter().sum::<Real>() / class_f1s.len() as Real;
        overall.f1 = avg;
        notes.push("overall F1 averages the per-class F1 scores".into());
    }
    Ok(SpotReport {
        method: cfg.method.as_str().into(),
        iou_threshold: cfg.iou_threshold,
        per_class,
        overall,
        frame_overall: CountMetrics::from_counts(frame_pooled.0, frame_pooled.1, frame_pooled.2),
        missing_videos: missing,
        notes,
        per_video,
    })
}

/// Writes a two-panel SVG of the processed score signals with ground-truth
/// and predicted interval overlays.
pub fn write_video_plot(
    path: &Path,
    video_id: &str,
    me: &[Real],
    mae: &[Real],
    detail: &VideoDetail,
) -> Result<()> {
    const W: usize = 900;
    const PANEL_H: usize = 140;
    const GAP: usize = 30;
    let h = 2 * PANEL_H + 3 * GAP;
    let n = me.len().max(2);
    let x_of = |i: usize| 40.0 + (i as f64 / (n - 1) as f64) * (W as f64 - 60.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{h}\" viewBox=\"0 0 {W} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"10\" y=\"16\" font-size=\"13\" font-family=\"monospace\">{video_id}</text>\n"
    ));
    for (panel, (lane, class)) in [(me, ExprClass::Me), (mae, ExprClass::Mae)]
        .into_iter()
        .enumerate()
    {
        let top = GAP + panel * (PANEL_H + GAP);
        let y_of = |v: Real| top as f64 + (1.0 - v.clamp(0.0, 1.0)) * PANEL_H as f64;
        svg.push_str(&format!(
            "<text x=\"10\" y=\"{}\" font-size=\"11\" font-family=\"monospace\">{}</text>\n",
            top + 12,
            class.as_str()
        ));
        svg.push_str(&format!(
            "<rect x=\"40\" y=\"{top}\" width=\"{}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#999\"/>\n",
            W - 60
        ));
        for iv in detail.ground_truth.iter().filter(|iv| iv.expr_class == class) {
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{top}\" width=\"{:.1}\" height=\"{PANEL_H}\" fill=\"#3a3\" opacity=\"0.25\"/>\n",
                x_of(iv.onset),
                (x_of(iv.offset) - x_of(iv.onset)).max(1.0),
            ));
        }
        for iv in detail.predicted.iter().filter(|iv| iv.expr_class == class) {
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{}\" width=\"{:.1}\" height=\"6\" fill=\"#c33\"/>\n",
                x_of(iv.onset),
                top + PANEL_H - 6,
                (x_of(iv.offset) - x_of(iv.onset)).max(1.0),
            ));
        }
        let pts: Vec<String> = lane
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.1},{:.1}", x_of(i), y_of(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#06c\" stroke-width=\"1\"/>\n",
            pts.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(svg.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
