//! Manifest ingestion, frame-level ground truth, skip computation, LOSO
//! splits and window sampling.
//!
//! A manifest is a CSV with header
//! `subject_id,video_id,frame_dir,frame_count,fps,onset,apex,offset,class`,
//! one row per annotation (`class` is `ME` or `MAE`); a video without
//! annotations appears once with the last four columns empty. Frames live as
//! zero-padded image files (`000001.png` is frame index 0) inside
//! `frame_dir`.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{self, Image};
use crate::rng::rng_from;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExprClass {
    Me,
    Mae,
}

impl ExprClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExprClass::Me => "ME",
            ExprClass::Mae => "MAE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ME" => Ok(ExprClass::Me),
            "MAE" => Ok(ExprClass::Mae),
            other => Err(Error::Validation(format!(
                "unknown expression class {other:?} (expected ME or MAE)"
            ))),
        }
    }
}

/// One labelled expression: inclusive `[onset, offset]`, optional apex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub subject_id: String,
    pub video_id: String,
    pub onset: usize,
    pub apex: Option<usize>,
    pub offset: usize,
    pub expr_class: ExprClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoInfo {
    pub video_id: String,
    pub subject_id: String,
    pub frame_dir: PathBuf,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub fps: f64,
    pub videos: Vec<VideoInfo>,
    pub annotations: Vec<Annotation>,
}

impl Manifest {
    pub fn video(&self, video_id: &str) -> Result<&VideoInfo> {
        self.videos
            .iter()
            .find(|v| v.video_id == video_id)
            .ok_or_else(|| Error::Validation(format!("unknown video id {video_id:?}")))
    }

    /// Sorted unique subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.videos.iter().map(|v| v.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn videos_of_subject(&self, subject_id: &str) -> Vec<&VideoInfo> {
        self.videos
            .iter()
            .filter(|v| v.subject_id == subject_id)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps <= 0.0 {
            return Err(Error::Validation(format!("fps must be > 0, got {}", self.fps)));
        }
        let mut ids = BTreeSet::new();
        for v in &self.videos {
            if !ids.insert(v.video_id.as_str()) {
                return Err(Error::Validation(format!(
                    "video {:?} declared twice with different definitions",
                    v.video_id
                )));
            }
            if v.frame_count == 0 {
                return Err(Error::Validation(format!(
                    "video {:?} has zero frames",
                    v.video_id
                )));
            }
        }
        for a in &self.annotations {
            let v = self.video(&a.video_id).map_err(|_| {
                Error::Validation(format!(
                    "annotation on {:?} references a video that is not listed",
                    a.video_id
                ))
            })?;
            if v.subject_id != a.subject_id {
                return Err(Error::Validation(format!(
                    "annotation on {:?} names subject {:?} but the video belongs to {:?}",
                    a.video_id, a.subject_id, v.subject_id
                )));
            }
            if let Some(apex) = a.apex {
                if !(a.onset <= apex && apex <= a.offset) {
                    return Err(Error::Validation(format!(
                        "annotation on {:?}: onset {} <= apex {} <= offset {} violated",
                        a.video_id, a.onset, apex, a.offset
                    )));
                }
            }
            if a.onset > a.offset {
                return Err(Error::Validation(format!(
                    "annotation on {:?}: onset {} exceeds offset {}",
                    a.video_id, a.onset, a.offset
                )));
            }
            if a.offset >= v.frame_count {
                return Err(Error::Validation(format!(
                    "annotation on {:?}: offset {} outside video of {} frames",
                    a.video_id, a.offset, v.frame_count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    subject_id: String,
    video_id: String,
    frame_dir: String,
    frame_count: usize,
    fps: f64,
    onset: Option<usize>,
    apex: Option<usize>,
    offset: Option<usize>,
    class: Option<String>,
}

/// Loads and eagerly validates a manifest CSV.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut videos: Vec<VideoInfo> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut annotations = Vec::new();
    let mut fps: Option<f64> = None;
    for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: format!("row {}: {e}", line + 2),
        })?;
        match fps {
            None => fps = Some(row.fps),
            Some(f) if f == row.fps => {}
            Some(f) => {
                return Err(Error::Validation(format!(
                    "row {}: fps {} conflicts with earlier fps {f}",
                    line + 2,
                    row.fps
                )))
            }
        }
        let info = VideoInfo {
            video_id: row.video_id.clone(),
            subject_id: row.subject_id.clone(),
            frame_dir: PathBuf::from(&row.frame_dir),
            frame_count: row.frame_count,
        };
        match seen.get(&row.video_id) {
            None => {
                seen.insert(row.video_id.clone(), videos.len());
                videos.push(info);
            }
            Some(&ix) => {
                if videos[ix] != info {
                    return Err(Error::Validation(format!(
                        "row {}: video {:?} redeclared inconsistently",
                        line + 2,
                        row.video_id
                    )));
                }
            }
        }
        match (row.onset, row.offset, row.class.as_deref()) {
            (None, None, None) | (None, None, Some("")) => {}
            (Some(onset), Some(offset), Some(class)) => annotations.push(Annotation {
                subject_id: row.subject_id,
                video_id: row.video_id,
                onset,
                apex: row.apex,
                offset,
                expr_class: ExprClass::parse(class)?,
            }),
            _ => {
                return Err(Error::Validation(format!(
                    "row {}: onset/offset/class must be all present or all empty",
                    line + 2
                )))
            }
        }
    }
    let manifest = Manifest {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        fps: fps.ok_or_else(|| Error::Validation("manifest has no rows".into()))?,
        videos,
        annotations,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes a manifest in the same CSV layout `load_manifest` reads.
pub fn save_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    let mut annotated: BTreeSet<&str> = BTreeSet::new();
    let io_err = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    for a in &m.annotations {
        let v = m.video(&a.video_id)?;
        annotated.insert(v.video_id.as_str());
        writer
            .serialize(ManifestRow {
                subject_id: a.subject_id.clone(),
                video_id: a.video_id.clone(),
                frame_dir: v.frame_dir.display().to_string(),
                frame_count: v.frame_count,
                fps: m.fps,
                onset: Some(a.onset),
                apex: a.apex,
                offset: Some(a.offset),
                class: Some(a.expr_class.as_str().into()),
            })
            .map_err(io_err)?;
    }
    for v in &m.videos {
        if !annotated.contains(v.video_id.as_str()) {
            writer
                .serialize(ManifestRow {
                    subject_id: v.subject_id.clone(),
                    video_id: v.video_id.clone(),
                    frame_dir: v.frame_dir.display().to_string(),
                    frame_count: v.frame_count,
                    fps: m.fps,
                    onset: None,
                    apex: None,
                    offset: None,
                    class: None,
                })
                .map_err(io_err)?;
        }
    }
    writer.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Per-frame multi-label ground truth for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub me: Vec<bool>,
    pub mae: Vec<bool>,
}

impl FrameLabels {
    pub fn len(&self) -> usize {
        self.me.len()
    }

    pub fn is_empty(&self) -> bool {
        self.me.is_empty()
    }

    /// True when the frame carries any movement label.
    pub fn movement(&self, t: usize) -> bool {
        self.me[t] || self.mae[t]
    }
}

/// Inclusive interval labelling; overlapping same-class intervals union.
pub fn frame_labels(m: &Manifest, video_id: &str) -> Result<FrameLabels> {
    let v = m.video(video_id)?;
    let mut labels = FrameLabels {
        me: vec![false; v.frame_count],
        mae: vec![false; v.frame_count],
    };
    for a in m.annotations.iter().filter(|a| a.video_id == video_id) {
        let lane = match a.expr_class {
            ExprClass::Me => &mut labels.me,
            ExprClass::Mae => &mut labels.mae,
        };
        for t in a.onset..=a.offset {
            lane[t] = true;
        }
    }
    Ok(labels)
}

/// How the "average mid-point of odd-numbered expression interval" is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KthMode {
    /// Mean duration over all intervals, rounded half-up and forced odd.
    #[default]
    OddLength,
    /// Mean duration over the 1st, 3rd, 5th... intervals only.
    OddIndexed,
}

/// Skip length `k = (N + 1) / 2` where `N` is the odd-forced rounded mean
/// expression duration (in frames, inclusive).
pub fn compute_kth_skip(m: &Manifest, class: ExprClass) -> Result<usize> {
    compute_kth_skip_with(m, class, KthMode::OddLength)
}

pub fn compute_kth_skip_with(m: &Manifest, class: ExprClass, mode: KthMode) -> Result<usize> {
    let mut durations: Vec<usize> = m
        .annotations
        .iter()
        .filter(|a| a.expr_class == class)
        .map(|a| a.offset - a.onset + 1)
        .collect();
    if mode == KthMode::OddIndexed {
        durations = durations.iter().copied().step_by(2).collect();
    }
    if durations.is_empty() {
        return Err(Error::Validation(format!(
            "no {} annotations to derive a skip from",
            class.as_str()
        )));
    }
    let mean = durations.iter().sum::<usize>() as f64 / durations.len() as f64;
    let mut n = (mean + 0.5).floor() as usize; // round half up
    if n % 2 == 0 {
        n += 1;
    }
    Ok((n + 1) / 2)
}

/// Movement-to-neutral frame ratio over all of one subject's videos.
/// A subject with zero neutral frames returns `+inf`.
pub fn move_to_neutral_ratio(m: &Manifest, subject_id: &str) -> Result<Real> {
    let videos = m.videos_of_subject(subject_id);
    if videos.is_empty() {
        return Err(Error::Validation(format!("unknown subject {subject_id:?}")));
    }
    let mut movement = 0usize;
    let mut neutral = 0usize;
    for v in videos {
        let labels = frame_labels(m, &v.video_id)?;
        for t in 0..labels.len() {
            if labels.movement(t) {
                movement += 1;
            } else {
                neutral += 1;
            }
        }
    }
    if neutral == 0 {
        return Ok(Real::INFINITY);
    }
    Ok(movement as Real / neutral as Real)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LosoSplit {
    pub test_subject: String,
    pub train_subjects: Vec<String>,
}

/// One split per subject, ordered by subject id; the test subject never
/// appears in its own training set.
pub fn loso_splits(m: &Manifest) -> Result<Vec<LosoSplit>> {
    let subjects = m.subjects();
    if subjects.len() < 2 {
        return Err(Error::Validation(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .iter()
        .map(|test| LosoSplit {
            test_subject: test.clone(),
            train_subjects: subjects.iter().filter(|s| *s != test).cloned().collect(),
        })
        .collect())
}

/// Temporal reference-frame offsets for the two streams. Stream 1 is the
/// short-skip (ME) pathway, stream 2 the long-skip (MaE) pathway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipConfig {
    /// Skips drawn uniformly from inclusive ranges each sample.
    Random {
        stream1: (usize, usize),
        stream2: (usize, usize),
    },
    /// Skips computed from mean expression durations.
    Kth { stream1: usize, stream2: usize },
    /// Hand-picked fixed skips.
    Manual { stream1: usize, stream2: usize },
}

impl SkipConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SkipConfig::Random { stream1, stream2 } => {
                if stream1.0 > stream1.1 || stream2.0 > stream2.1 {
                    return Err(Error::Config(format!(
                        "skip ranges must be ordered, got {stream1:?} and {stream2:?}"
                    )));
                }
                if stream1.1 >= stream2.0 {
                    return Err(Error::Config(format!(
                        "stream 1 skips must stay below stream 2 skips, got {stream1:?} vs {stream2:?}"
                    )));
                }
                if stream1.0 == 0 {
                    return Err(Error::Config("skips must be at least 1 frame".into()));
                }
                Ok(())
            }
            SkipConfig::Kth { stream1, stream2 } | SkipConfig::Manual { stream1, stream2 } => {
                if stream1 == 0 {
                    return Err(Error::Config("skips must be at least 1 frame".into()));
                }
                if stream1 >= stream2 {
                    return Err(Error::Config(format!(
                        "stream 1 skip must be below stream 2 skip, got {stream1} vs {stream2}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Derives the testing-time skips from the manifest's mean durations.
    pub fn kth_from_manifest(m: &Manifest, mode: KthMode) -> Result<SkipConfig> {
        let cfg = SkipConfig::Kth {
            stream1: compute_kth_skip_with(m, ExprClass::Me, mode)?,
            stream2: compute_kth_skip_with(m, ExprClass::Mae, mode)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// True when resolving consumes no randomness.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, SkipConfig::Random { .. })
    }

    /// Concrete (stream1, stream2) skips for one window.
    pub fn resolve(&self, rng_seed: u64) -> (usize, usize) {
        match *self {
            SkipConfig::Random { stream1, stream2 } => {
                let mut rng = rng_from(rng_seed, "skip", &[]);
                (
                    rng.random_range(stream1.0..=stream1.1),
                    rng.random_range(stream2.0..=stream2.1),
                )
            }
            SkipConfig::Kth { stream1, stream2 } | SkipConfig::Manual { stream1, stream2 } => {
                (stream1, stream2)
            }
        }
    }
}

/// Frame indices making up one network input window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub frame_index: usize,
    pub ref_short_index: usize,
    pub ref_long_index: usize,
    pub skips: (usize, usize),
    pub target_me: bool,
    pub target_mae: bool,
}

/// The materialised 4-image network input: both streams share `current`;
/// references look backward `skip` frames, clamped at the video start.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub current: Image,
    pub ref_short: Image,
    pub ref_long: Image,
    pub target_me: bool,
    pub target_mae: bool,
    pub video_id: String,
    pub frame_index: usize,
    pub skips: (usize, usize),
}

/// Index-level window assembly (no I/O): references at `max(0, t - skip)`.
pub fn sample_window_spec(
    labels: &FrameLabels,
    t: usize,
    cfg: &SkipConfig,
    rng_seed: u64,
) -> Result<WindowSpec> {
    cfg.validate()?;
    if t >= labels.len() {
        return Err(Error::Argument(format!(
            "frame {t} outside video of {} frames",
            labels.len()
        )));
    }
    let (s1, s2) = cfg.resolve(rng_seed);
    Ok(WindowSpec {
        frame_index: t,
        ref_short_index: t.saturating_sub(s1),
        ref_long_index: t.saturating_sub(s2),
        skips: (s1, s2),
        target_me: labels.me[t],
        target_mae: labels.mae[t],
    })
}

/// Loads the three frames of a window through `source`.
pub fn sample_window(
    m: &Manifest,
    source: &dyn FrameSource,
    video_id: &str,
    t: usize,
    cfg: &SkipConfig,
    rng_seed: u64,
) -> Result<WindowSample> {
    let labels = frame_labels(m, video_id)?;
    let spec = sample_window_spec(&labels, t, cfg, rng_seed)?;
    let video = m.video(video_id)?;
    Ok(WindowSample {
        current: source.load(video, spec.frame_index)?,
        ref_short: source.load(video, spec.ref_short_index)?,
        ref_long: source.load(video, spec.ref_long_index)?,
        target_me: spec.target_me,
        target_mae: spec.target_mae,
        video_id: video_id.to_string(),
        frame_index: t,
        skips: spec.skips,
    })
}

/// Frame supplier abstraction so training can be instrumented and tests can
/// inject synthetic pixels.
pub trait FrameSource: Send + Sync {
    fn load(&self, video: &VideoInfo, frame: usize) -> Result<Image>;
}

/// Reads zero-padded frame files from disk, caching raw 8-bit pixels.
pub struct DiskFrameSource {
    height: usize,
    width: usize,
    cache: Mutex<HashMap<(String, usize), Arc<Vec<u8>>>>,
}

impl DiskFrameSource {
    pub fn new(height: usize, width: usize) -> Self {
        DiskFrameSource {
            height,
            width,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// `frame_path(dir, 0)` -> `dir/000001.png` (1-based file names).
    pub fn frame_path(dir: &Path, frame: usize) -> PathBuf {
        dir.join(format!("{:06}.png", frame + 1))
    }
}

impl FrameSource for DiskFrameSource {
    fn load(&self, video: &VideoInfo, frame: usize) -> Result<Image> {
        if frame >= video.frame_count {
            return Err(Error::Argument(format!(
                "frame {frame} outside video {:?} of {} frames",
                video.video_id, video.frame_count
            )));
        }
        let key = (video.video_id.clone(), frame);
        if let Some(bytes) = self.cache.lock().unwrap().get(&key).cloned() {
            return bytes_to_image(&bytes, self.height, self.width);
        }
        let png = Self::frame_path(&video.frame_dir, frame);
        let path = if png.exists() {
            png
        } else {
            let pgm = video.frame_dir.join(format!("{:06}.pgm", frame + 1));
            if pgm.exists() {
                pgm
            } else {
                png
            }
        };
        let img = preprocess::load_frame_sized(&path, self.height, self.width)?;
        let bytes: Arc<Vec<u8>> = Arc::new(
            img.data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        );
        self.cache.lock().unwrap().insert(key, bytes.clone());
        bytes_to_image(&bytes, self.height, self.width)
    }
}

fn bytes_to_image(bytes: &[u8], h: usize, w: usize) -> Result<Image> {
    Image::new(h, w, bytes.iter().map(|&b| b as Real / 255.0).collect())
}

/// Wrapper that records which videos were read; the trainer uses it to
/// assert the test subject's frames are never touched during training.
pub struct RecordingFrameSource<'a> {
    inner: &'a dyn FrameSource,
    seen: Mutex<BTreeSet<String>>,
}

impl<'a> RecordingFrameSource<'a> {
    pub fn new(inner: &'a dyn FrameSource) -> Self {
        RecordingFrameSource {
            inner,
            seen: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn videos_seen(&self) -> BTreeSet<String> {
        self.seen.lock().unwrap().clone()
    }
}

impl FrameSource for RecordingFrameSource<'_> {
    fn load(&self, video: &VideoInfo, frame: usize) -> Result<Image> {
        self.seen.lock().unwrap().insert(video.video_id.clone());
        self.inner.load(video, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(i: usize) -> String {
        format!("s{i:02}")
    }

    fn simple_manifest() -> Manifest {
        Manifest {
            name: "test".into(),
            fps: 30.0,
            videos: vec![
                VideoInfo {
                    video_id: "s01_v01".into(),
                    subject_id: "s01".into(),
                    frame_dir: PathBuf::from("frames/s01_v01"),
                    frame_count: 100,
                },
                VideoInfo {
                    video_id: "s02_v01".into(),
                    subject_id: "s02".into(),
                    frame_dir: PathBuf::from("frames/s02_v01"),
                    frame_count: 80,
                },
            ],
            annotations: vec![
                Annotation {
                    subject_id: "s01".into(),
                    video_id: "s01_v01".into(),
                    onset: 5,
                    apex: Some(7),
                    offset: 9,
                    expr_class: ExprClass::Me,
                },
                Annotation {
                    subject_id: "s01".into(),
                    video_id: "s01_v01".into(),
                    onset: 7,
                    apex: None,
                    offset: 20,
                    expr_class: ExprClass::Mae,
                },
            ],
        }
    }

    struct IndexSource;
    impl FrameSource for IndexSource {
        fn load(&self, _video: &VideoInfo, frame: usize) -> Result<Image> {
            Ok(Image::filled(4, 4, frame as Real / 1000.0))
        }
    }

    #[test]
    fn manifest_round_trip_is_loss_free() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let mut m = simple_manifest();
        m.name = "manifest".into();
        // include an annotation-free video
        m.videos.push(VideoInfo {
            video_id: "s03_v01".into(),
            subject_id: "s03".into(),
            frame_dir: PathBuf::from("frames/s03_v01"),
            frame_count: 50,
        });
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.fps, m.fps);
        assert_eq!(loaded.annotations, m.annotations);
        let mut want = m.videos.clone();
        want.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let mut got = loaded.videos.clone();
        got.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        assert_eq!(got, want);
    }

    #[test]
    fn empty_annotation_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(
            &path,
            "subject_id,video_id,frame_dir,frame_count,fps,onset,apex,offset,class\n\
             s01,s01_v01,frames/v01,100,30,,,,\n",
        )
        .unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.videos.len(), 1);
        assert!(m.annotations.is_empty());
    }

    #[test]
    fn out_of_range_offset_rejected() {
        let mut m = simple_manifest();
        m.annotations[0].offset = 100; // frame_count is 100, max index 99
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("s01_v01"));
    }

    #[test]
    fn onset_after_offset_rejected() {
        let mut m = simple_manifest();
        m.annotations[0].onset = 50;
        m.annotations[0].offset = 10;
        m.annotations[0].apex = None;
        assert!(m.validate().is_err());
    }

    #[test]
    fn frame_labels_inclusive_and_multilabel() {
        let m = simple_manifest();
        let labels = frame_labels(&m, "s01_v01").unwrap();
        for t in 0..100 {
            assert_eq!(labels.me[t], (5..=9).contains(&t), "me at {t}");
            assert_eq!(labels.mae[t], (7..=20).contains(&t), "mae at {t}");
        }
        assert!(labels.me[8] && labels.mae[8]);
    }

    #[test]
    fn frame_labels_match_membership_oracle_on_random_annotations() {
        let mut rng = rng_from(9, "labels", &[]);
        let frame_count = 200usize;
        let mut m = Manifest {
            name: "r".into(),
            fps: 30.0,
            videos: vec![VideoInfo {
                video_id: "v".into(),
                subject_id: "s".into(),
                frame_dir: PathBuf::from("x"),
                frame_count,
            }],
            annotations: Vec::new(),
        };
        for _ in 0..50 {
            let onset = rng.random_range(0..frame_count - 1);
            let offset = rng.random_range(onset..frame_count.min(onset + 40).min(frame_count));
            m.annotations.push(Annotation {
                subject_id: "s".into(),
                video_id: "v".into(),
                onset,
                apex: None,
                offset,
                expr_class: if rng.random::<bool>() { ExprClass::Me } else { ExprClass::Mae },
            });
        }
        let labels = frame_labels(&m, "v").unwrap();
        for t in 0..frame_count {
            let want_me = m
                .annotations
                .iter()
                .any(|a| a.expr_class == ExprClass::Me && a.onset <= t && t <= a.offset);
            let want_mae = m
                .annotations
                .iter()
                .any(|a| a.expr_class == ExprClass::Mae && a.onset <= t && t <= a.offset);
            assert_eq!(labels.me[t], want_me);
            assert_eq!(labels.mae[t], want_mae);
        }

        // annotation order must not matter
        let mut shuffled = m.clone();
        shuffled.annotations.reverse();
        assert_eq!(frame_labels(&shuffled, "v").unwrap(), labels);
    }

    fn manifest_with_durations(me: &[usize], mae: &[usize]) -> Manifest {
        let mut m = Manifest {
            name: "d".into(),
            fps: 30.0,
            videos: vec![VideoInfo {
                video_id: "v".into(),
                subject_id: "s".into(),
                frame_dir: PathBuf::from("x"),
                frame_count: 10_000,
            }],
            annotations: Vec::new(),
        };
        let mut cursor = 0;
        for (&dur, class) in me
            .iter()
            .zip(std::iter::repeat(ExprClass::Me))
            .chain(mae.iter().zip(std::iter::repeat(ExprClass::Mae)))
        {
            m.annotations.push(Annotation {
                subject_id: "s".into(),
                video_id: "v".into(),
                onset: cursor,
                apex: None,
                offset: cursor + dur - 1,
                expr_class: class,
            });
            cursor += dur + 5;
        }
        m
    }

    #[test]
    fn kth_skip_hand_computed_cases() {
        // single duration 21: N = 21 (odd), k = 11
        let m = manifest_with_durations(&[21], &[30]);
        assert_eq!(compute_kth_skip(&m, ExprClass::Me).unwrap(), 11);
        // durations {9, 11}: mean 10 -> even -> 11 -> k = 6
        let m = manifest_with_durations(&[9, 11], &[30]);
        assert_eq!(compute_kth_skip(&m, ExprClass::Me).unwrap(), 6);
        // no annotations of the class -> error
        let m = manifest_with_durations(&[9], &[]);
        assert!(compute_kth_skip(&m, ExprClass::Mae).is_err());
    }

    #[test]
    fn kth_skip_positive_and_ordered_by_duration() {
        let mut rng = rng_from(11, "kth", &[]);
        for _ in 0..50 {
            let me: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(2..15)).collect();
            let mae: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(20..90)).collect();
            let m = manifest_with_durations(&me, &mae);
            let kme = compute_kth_skip(&m, ExprClass::Me).unwrap();
            let kmae = compute_kth_skip(&m, ExprClass::Mae).unwrap();
            assert!(kme >= 1 && kmae >= 1);
            let mean = |d: &[usize]| d.iter().sum::<usize>() as f64 / d.len() as f64;
            if mean(&me) < mean(&mae) {
                assert!(kme < kmae, "{me:?} {mae:?} -> {kme} vs {kmae}");
            }
        }
    }

    #[test]
    fn kth_odd_indexed_mode_uses_alternating_intervals() {
        // odd-numbered (1st, 3rd) durations: {9, 21} -> mean 15 (odd) -> k = 8
        let m = manifest_with_durations(&[9, 99, 21], &[30]);
        assert_eq!(
            compute_kth_skip_with(&m, ExprClass::Me, KthMode::OddIndexed).unwrap(),
            8
        );
    }

    #[test]
    fn move_to_neutral_cases() {
        // all neutral
        let m = manifest_with_durations(&[], &[]);
        let m = Manifest { annotations: Vec::new(), ..m };
        assert_eq!(move_to_neutral_ratio(&m, "s").unwrap(), 0.0);

        // 30 movement frames over 100 -> 30/70
        let mut m = manifest_with_durations(&[], &[]);
        m.videos[0].frame_count = 100;
        m.annotations.push(Annotation {
            subject_id: "s".into(),
            video_id: "v".into(),
            onset: 10,
            apex: None,
            offset: 39,
            expr_class: ExprClass::Mae,
        });
        let r = move_to_neutral_ratio(&m, "s").unwrap();
        assert!((r - 30.0 / 70.0).abs() < 1e-12);

        // zero neutral frames -> +inf sentinel
        let mut m = manifest_with_durations(&[], &[]);
        m.videos[0].frame_count = 10;
        m.annotations.push(Annotation {
            subject_id: "s".into(),
            video_id: "v".into(),
            onset: 0,
            apex: None,
            offset: 9,
            expr_class: ExprClass::Me,
        });
        assert!(move_to_neutral_ratio(&m, "s").unwrap().is_infinite());
    }

    fn many_subject_manifest(n: usize) -> Manifest {
        Manifest {
            name: "many".into(),
            fps: 30.0,
            videos: (0..n)
                .map(|i| VideoInfo {
                    video_id: format!("{}_v01", subject(i)),
                    subject_id: subject(i),
                    frame_dir: PathBuf::from("x"),
                    frame_count: 50,
                })
                .collect(),
            annotations: Vec::new(),
        }
    }

    #[test]
    fn loso_three_subjects() {
        let splits = loso_splits(&many_subject_manifest(3)).unwrap();
        assert_eq!(splits.len(), 3);
        for s in &splits {
            assert_eq!(s.train_subjects.len(), 2);
            assert!(!s.train_subjects.contains(&s.test_subject));
        }
    }

    #[test]
    fn loso_is_a_partition() {
        let m = many_subject_manifest(8);
        let splits = loso_splits(&m).unwrap();
        let tests: BTreeSet<String> = splits.iter().map(|s| s.test_subject.clone()).collect();
        assert_eq!(tests.len(), 8);
        assert_eq!(tests, m.subjects().into_iter().collect());
        for s in &splits {
            let train: BTreeSet<&String> = s.train_subjects.iter().collect();
            assert_eq!(train.len(), 7);
            assert!(!train.contains(&s.test_subject));
        }
    }

    #[test]
    fn loso_single_subject_rejected() {
        assert!(loso_splits(&many_subject_manifest(1)).is_err());
    }

    #[test]
    fn sample_window_clamps_at_video_start() {
        let m = simple_manifest();
        let cfg = SkipConfig::Manual { stream1: 6, stream2: 19 };
        let w = sample_window(&m, &IndexSource, "s01_v01", 0, &cfg, 0).unwrap();
        assert_eq!(w.frame_index, 0);
        assert_eq!(w.ref_short.data[0], 0.0);
        assert_eq!(w.ref_long.data[0], 0.0);
    }

    #[test]
    fn sample_window_kth_arithmetic() {
        let mut m = simple_manifest();
        m.videos[0].frame_count = 600;
        m.annotations.clear();
        let labels = frame_labels(&m, "s01_v01").unwrap();
        let cfg = SkipConfig::Kth { stream1: 37, stream2: 217 };
        let spec = sample_window_spec(&labels, 500, &cfg, 123).unwrap();
        assert_eq!(spec.ref_short_index, 463);
        assert_eq!(spec.ref_long_index, 283);
        // deterministic: seed is ignored in kth mode
        let again = sample_window_spec(&labels, 500, &cfg, 999).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn random_skips_cover_their_ranges() {
        let cfg = SkipConfig::Random { stream1: (25, 75), stream2: (200, 400) };
        let (mut min1, mut max1, mut min2, mut max2) = (usize::MAX, 0, usize::MAX, 0);
        for seed in 0..10_000u64 {
            let (s1, s2) = cfg.resolve(seed);
            assert!((25..=75).contains(&s1));
            assert!((200..=400).contains(&s2));
            min1 = min1.min(s1);
            max1 = max1.max(s1);
            min2 = min2.min(s2);
            max2 = max2.max(s2);
        }
        assert_eq!((min1, max1), (25, 75));
        assert_eq!((min2, max2), (200, 400));
    }

    #[test]
    fn skip_config_orders_streams() {
        assert!(SkipConfig::Manual { stream1: 20, stream2: 10 }.validate().is_err());
        assert!(SkipConfig::Random { stream1: (3, 20), stream2: (16, 50) }
            .validate()
            .is_err());
        assert!(SkipConfig::Random { stream1: (3, 9), stream2: (16, 50) }
            .validate()
            .is_ok());
    }

    #[test]
    fn recording_source_tracks_videos() {
        let m = simple_manifest();
        let rec = RecordingFrameSource::new(&IndexSource);
        let cfg = SkipConfig::Manual { stream1: 2, stream2: 5 };
        sample_window(&m, &rec, "s01_v01", 10, &cfg, 0).unwrap();
        assert_eq!(rec.videos_seen().into_iter().collect::<Vec<_>>(), vec!["s01_v01"]);
    }
}
