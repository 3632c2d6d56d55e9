//! Leave-one-subject-out training driver.
//!
//! Each epoch draws a balanced window resample (equal numbers of movement
//! and neutral frames per training subject, capped), augments each window
//! with one parameter draw applied to all of its frames, applies random
//! reference-frame skips, and runs SGD on the weighted multi-label loss.
//! Early stopping watches a held-out subject-stratified validation slice
//! and restores the best-epoch parameters exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::Serialize;

use crate::dataset::{
    frame_labels, loso_splits, FrameLabels, FrameSource, LosoSplit, Manifest,
    RecordingFrameSource, SkipConfig,
};
use crate::error::{Error, Result};
use crate::model::{assemble_stream, ModelConfig, ScoreSeries, SpotterNet};
use crate::preprocess::{augment, lcn_normalize, AugmentParams, Image};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::ops::{self, LossForm, LossWeights};
use crate::tensor::sgd::Sgd;
use crate::tensor::{Mode, Real, Tape, Tensor};

/// Ranges the per-window augmentation parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    pub enabled: bool,
    /// Contrast, gamma intensity and gamma gain all draw from this range.
    pub photometric: (Real, Real),
    pub hflip_prob: Real,
    /// Rotation draws from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: Real,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            enabled: true,
            photometric: (0.5, 1.5),
            hflip_prob: 0.5,
            rotation_deg: 10.0,
        }
    }
}

impl AugmentRanges {
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> AugmentParams {
        let (lo, hi) = self.photometric;
        AugmentParams {
            contrast: rng.random_range(lo..=hi),
            gamma_intensity: rng.random_range(lo..=hi),
            gamma_gain: rng.random_range(lo..=hi),
            hflip_prob: self.hflip_prob,
            rotation_deg: rng.random_range(-self.rotation_deg..=self.rotation_deg),
        }
    }
}

/// Which loss the early stopper watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopMonitor {
    #[default]
    Validation,
    Train,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: Real,
    pub momentum: Real,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_weights: LossWeights,
    pub loss_form: LossForm,
    /// Training-time reference skips (random mode per the training recipe).
    pub skip_cfg: SkipConfig,
    pub augment: AugmentRanges,
    /// Per-subject per-class cap on windows drawn each epoch.
    pub windows_per_class_per_subject: usize,
    /// Fraction of candidate windows held out for early stopping.
    pub val_fraction: Real,
    pub stop_monitor: StopMonitor,
    /// Drop windows whose references would clamp at the video start
    /// instead of clamping them.
    pub discard_clamped_windows: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.005,
            momentum: 0.9,
            max_epochs: 100,
            patience: 5,
            loss_weights: LossWeights::default(),
            loss_form: LossForm::Corrected,
            skip_cfg: SkipConfig::Random {
                stream1: (3, 9),
                stream2: (16, 50),
            },
            augment: AugmentRanges::default(),
            windows_per_class_per_subject: 64,
            val_fraction: 0.10,
            stop_monitor: StopMonitor::Validation,
            discard_clamped_windows: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.val_fraction) || self.val_fraction <= 0.0 {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            )));
        }
        if self.windows_per_class_per_subject == 0 {
            return Err(Error::Config("window cap must be at least 1".into()));
        }
        self.skip_cfg.validate()?;
        LossWeights::new(
            self.loss_weights.w,
            self.loss_weights.m_me,
            self.loss_weights.m_mae,
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub test_subject: String,
    pub epoch_train_loss: Vec<Real>,
    pub epoch_val_loss: Vec<Real>,
    /// 1-based epoch the run ended on.
    pub stop_epoch: usize,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Patience-based early stopping: stops after `patience` consecutive
/// epochs without strict improvement, remembering the best epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<Real>,
    best_epoch: usize,
    streak: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            best_epoch: 0,
            streak: 0,
        }
    }

    /// Feeds one epoch's monitored loss; returns true when it improved.
    pub fn observe(&mut self, epoch: usize, loss: Real) -> bool {
        match self.best {
            Some(best) if loss >= best => {
                self.streak += 1;
                false
            }
            _ => {
                self.best = Some(loss);
                self.best_epoch = epoch;
                self.streak = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.streak >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One candidate window: a (video, frame) pair with its movement flag.
#[derive(Debug, Clone)]
struct Candidate {
    video_ix: usize,
    t: usize,
    movement: bool,
}

struct SubjectPool {
    movement: Vec<Candidate>,
    neutral: Vec<Candidate>,
}

fn max_skip(cfg: &SkipConfig) -> usize {
    match *cfg {
        SkipConfig::Random { stream2, .. } => stream2.1,
        SkipConfig::Kth { stream2, .. } | SkipConfig::Manual { stream2, .. } => stream2,
    }
}

/// Builds the per-subject candidate pools over the training subjects.
fn build_pools(
    m: &Manifest,
    subjects: &[String],
    labels: &BTreeMap<String, FrameLabels>,
    cfg: &TrainConfig,
) -> Vec<(String, SubjectPool)> {
    let min_t = if cfg.discard_clamped_windows {
        max_skip(&cfg.skip_cfg)
    } else {
        0
    };
    subjects
        .iter()
        .map(|subject| {
            let mut pool = SubjectPool {
                movement: Vec::new(),
                neutral: Vec::new(),
            };
            for (video_ix, v) in m.videos.iter().enumerate() {
                if &v.subject_id != subject {
                    continue;
                }
                let l = &labels[&v.video_id];
                for t in min_t..v.frame_count {
                    let c = Candidate {
                        video_ix,
                        t,
                        movement: l.movement(t),
                    };
                    if c.movement {
                        pool.movement.push(c);
                    } else {
                        pool.neutral.push(c);
                    }
                }
            }
            (subject.clone(), pool)
        })
        .collect()
}

/// Loads, augments and normalises one window into its two stream pairs.
fn materialise_window(
    m: &Manifest,
    source: &dyn FrameSource,
    net_cfg: &ModelConfig,
    labels: &FrameLabels,
    video_ix: usize,
    t: usize,
    skip_cfg: &SkipConfig,
    aug: Option<&AugmentRanges>,
    seed: u64,
) -> Result<(Image, Image, Image, (Real, Real))> {
    let spec = crate::dataset::sample_window_spec(labels, t, skip_cfg, derive_seed(seed, "skip", &[]))?;
    let video = &m.videos[video_ix];
    let mut current = source.load(video, spec.frame_index)?;
    let mut ref_short = source.load(video, spec.ref_short_index)?;
    let mut ref_long = source.load(video, spec.ref_long_index)?;
    if let Some(ranges) = aug {
        if ranges.enabled {
            let mut rng = rng_from(seed, "aug-params", &[]);
            let params = ranges.sample(&mut rng);
            // same parameters and flip draw for every frame of the window
            let flip_seed = derive_seed(seed, "aug-flip", &[]);
            current = augment(&current, &params, flip_seed)?;
            ref_short = augment(&ref_short, &params, flip_seed)?;
            ref_long = augment(&ref_long, &params, flip_seed)?;
        }
    }
    if net_cfg.use_lcn_layer {
        current = lcn_normalize(&current, &net_cfg.lcn)?;
        ref_short = lcn_normalize(&ref_short, &net_cfg.lcn)?;
        ref_long = lcn_normalize(&ref_long, &net_cfg.lcn)?;
    }
    let target = (
        if spec.target_me { 1.0 } else { 0.0 },
        if spec.target_mae { 1.0 } else { 0.0 },
    );
    Ok((current, ref_short, ref_long, target))
}

struct BatchTensors {
    stream1: Tensor,
    stream2: Tensor,
    targets: Tensor,
}

#[allow(clippy::too_many_arguments)]
fn load_batch(
    m: &Manifest,
    source: &dyn FrameSource,
    net_cfg: &ModelConfig,
    labels_by_video: &BTreeMap<String, FrameLabels>,
    batch: &[Candidate],
    skip_cfg: &SkipConfig,
    aug: Option<&AugmentRanges>,
    seed: u64,
) -> Result<BatchTensors> {
    let mut images = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len() * 2);
    for (i, c) in batch.iter().enumerate() {
        let video = &m.videos[c.video_ix];
        let labels = &labels_by_video[&video.video_id];
        let (cur, rs, rl, tg) = materialise_window(
            m,
            source,
            net_cfg,
            labels,
            c.video_ix,
            c.t,
            skip_cfg,
            aug,
            derive_seed(seed, "window", &[i as u64]),
        )?;
        targets.push(tg.0);
        targets.push(tg.1);
        images.push((cur, rs, rl));
    }
    let pairs1: Vec<(&Image, &Image)> = images.iter().map(|(c, rs, _)| (rs, c)).collect();
    let pairs2: Vec<(&Image, &Image)> = images.iter().map(|(c, _, rl)| (rl, c)).collect();
    Ok(BatchTensors {
        stream1: assemble_stream(&pairs1)?,
        stream2: assemble_stream(&pairs2)?,
        targets: Tensor::new(vec![batch.len(), 2], targets)?,
    })
}

fn run_loss_batch(
    net: &SpotterNet,
    tensors: BatchTensors,
    cfg: &TrainConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(Real, Option<Tape>)> {
    let mut tape = Tape::new();
    let trace = net.forward_batch(&mut tape, tensors.stream1, tensors.stream2, mode, dropout_seed)?;
    let loss_var = ops::weighted_bce_loss(
        &mut tape,
        trace.scores,
        &tensors.targets,
        &cfg.loss_weights,
        cfg.loss_form,
    )?;
    let loss = tape.value(loss_var).item()?;
    if mode == Mode::Train {
        tape.backward(loss_var)?;
        Ok((loss, None))
    } else {
        Ok((loss, None))
    }
}

/// Trains one LOSO split. The test subject's frames are never read: the
/// loader is instrumented and the run fails loudly if they are.
pub fn train_split(
    net: &mut SpotterNet,
    m: &Manifest,
    source: &dyn FrameSource,
    split: &LosoSplit,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if split.train_subjects.is_empty() {
        return Err(Error::Validation("empty training subject list".into()));
    }
    let started = Instant::now();
    let recorder = RecordingFrameSource::new(source);

    let mut labels_by_video = BTreeMap::new();
    for v in &m.videos {
        labels_by_video.insert(v.video_id.clone(), frame_labels(m, &v.video_id)?);
    }
    let pools = build_pools(m, &split.train_subjects, &labels_by_video, cfg);

    // fixed subject-stratified validation slice, removed from the pools
    let mut train_pools: Vec<(String, SubjectPool)> = Vec::new();
    let mut val_windows: Vec<Candidate> = Vec::new();
    for (subject_ix, (subject, pool)) in pools.into_iter().enumerate() {
        let take = |mut lane: Vec<Candidate>, lane_ix: u64| -> (Vec<Candidate>, Vec<Candidate>) {
            let mut rng = rng_from(cfg.seed, "val-slice", &[subject_ix as u64, lane_ix]);
            lane.shuffle(&mut rng);
            let n_val = ((lane.len() as Real) * cfg.val_fraction).ceil() as usize;
            let val = lane.split_off(lane.len().saturating_sub(n_val));
            (lane, val)
        };
        let (mov_train, mut mov_val) = take(pool.movement, 0);
        let (neu_train, mut neu_val) = take(pool.neutral, 1);
        // the whole slice stays held out of training, but the loss that
        // drives early stopping is computed on a fixed balanced subsample
        // so validation cost tracks the epoch cost
        mov_val.truncate(cfg.windows_per_class_per_subject);
        neu_val.truncate(cfg.windows_per_class_per_subject);
        val_windows.extend(mov_val);
        val_windows.extend(neu_val);
        train_pools.push((
            subject,
            SubjectPool {
                movement: mov_train,
                neutral: neu_train,
            },
        ));
    }
    if train_pools.iter().all(|(_, p)| p.movement.is_empty() && p.neutral.is_empty()) {
        return Err(Error::Validation("no training windows available".into()));
    }

    let mut optimizer = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_snapshot = net.snapshot();
    let mut epoch_train_loss = Vec::new();
    let mut epoch_val_loss = Vec::new();
    let mut stop_epoch = 0;
    let params = net.parameters();

    for epoch in 1..=cfg.max_epochs {
        stop_epoch = epoch;
        // balanced resample
        let mut windows: Vec<Candidate> = Vec::new();
        for (subject_ix, (_, pool)) in train_pools.iter().enumerate() {
            let n = pool
                .movement
                .len()
                .min(pool.neutral.len())
                .min(cfg.windows_per_class_per_subject);
            let mut rng = rng_from(cfg.seed, "resample", &[epoch as u64, subject_ix as u64]);
            for lane in [&pool.movement, &pool.neutral] {
                let mut ixs: Vec<usize> = (0..lane.len()).collect();
                ixs.shuffle(&mut rng);
                windows.extend(ixs.into_iter().take(n).map(|i| lane[i].clone()));
            }
        }
        if windows.is_empty() {
            return Err(Error::Validation(
                "balanced resample produced no windows (no movement or no neutral frames)".into(),
            ));
        }
        let mut rng = rng_from(cfg.seed, "shuffle", &[epoch as u64]);
        windows.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (step, batch) in windows.chunks(cfg.batch_size).enumerate() {
            let tensors = load_batch(
                m,
                &recorder,
                &net.cfg,
                &labels_by_video,
                batch,
                &cfg.skip_cfg,
                Some(&cfg.augment),
                derive_seed(cfg.seed, "train-batch", &[epoch as u64, step as u64]),
            )?;
            net.zero_grads();
            let (loss, _) = run_loss_batch(
                net,
                tensors,
                cfg,
                Mode::Train,
                derive_seed(cfg.seed, "dropout", &[epoch as u64, step as u64]),
            )?;
            optimizer.step(&params);
            loss_sum += loss * batch.len() as Real;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as Real;
        epoch_train_loss.push(train_loss);

        // validation loss: random skips, no augmentation, inference mode
        let val_loss = if val_windows.is_empty() {
            train_loss
        } else {
            let mut loss_sum = 0.0;
            let mut seen = 0usize;
            for (step, batch) in val_windows.chunks(cfg.batch_size).enumerate() {
                // validation skips are random but fixed across epochs, so
                // the early-stopping signal is comparable epoch to epoch
                let tensors = load_batch(
                    m,
                    &recorder,
                    &net.cfg,
                    &labels_by_video,
                    batch,
                    &cfg.skip_cfg,
                    None,
                    derive_seed(cfg.seed, "val-batch", &[step as u64]),
                )?;
                let (loss, _) = run_loss_batch(net, tensors, cfg, Mode::Infer, 0)?;
                loss_sum += loss * batch.len() as Real;
                seen += batch.len();
            }
            loss_sum / seen as Real
        };
        epoch_val_loss.push(val_loss);

        let monitored = match cfg.stop_monitor {
            StopMonitor::Validation => val_loss,
            StopMonitor::Train => train_loss,
        };
        if stopper.observe(epoch, monitored) {
            best_snapshot = net.snapshot();
        }
        if stopper.should_stop() {
            break;
        }
    }

    net.restore(&best_snapshot)?;

    // leakage audit: training must never have touched the test subject
    let test_videos: std::collections::BTreeSet<String> = m
        .videos
        .iter()
        .filter(|v| v.subject_id == split.test_subject)
        .map(|v| v.video_id.clone())
        .collect();
    let seen = recorder.videos_seen();
    if let Some(leak) = seen.intersection(&test_videos).next() {
        return Err(Error::State(format!(
            "training read test-subject video {leak:?}"
        )));
    }

    let checkpoint = match checkpoint_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
            let ckpt = net.to_checkpoint(Some(optimizer.velocities()));
            crate::checkpoint::save_checkpoint(&ckpt, path)?;
            Some(path.to_path_buf())
        }
        None => None,
    };

    Ok(TrainReport {
        test_subject: split.test_subject.clone(),
        epoch_train_loss,
        epoch_val_loss,
        stop_epoch,
        best_epoch: stopper.best_epoch(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint,
    })
}

/// Full LOSO product: per-subject trained models, test-video score series
/// and training reports. Splits run in parallel.
pub struct LosoOutput {
    pub scores: BTreeMap<String, Vec<ScoreSeries>>,
    pub reports: BTreeMap<String, TrainReport>,
}

pub fn run_loso(
    m: &Manifest,
    source: &(dyn FrameSource + Sync),
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    eval_skips: &SkipConfig,
    out_dir: Option<&Path>,
) -> Result<LosoOutput> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    eval_skips.validate()?;
    let splits = loso_splits(m)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        std::fs::create_dir_all(dir.join("scores"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    use rayon::prelude::*;
    let results: Result<Vec<(String, TrainReport, Vec<ScoreSeries>)>> = splits
        .par_iter()
        .enumerate()
        .map(|(ix, split)| {
            let mut net = SpotterNet::build(
                model_cfg.clone(),
                derive_seed(train_cfg.seed, "init", &[ix as u64]),
            )?;
            let ckpt_path = out_dir
                .map(|d| d.join("checkpoints").join(format!("{}.ckpt", split.test_subject)));
            let report = train_split(
                &mut net,
                m,
                source,
                split,
                train_cfg,
                ckpt_path.as_deref(),
            )?;
            let mut series = Vec::new();
            for v in m.videos.iter().filter(|v| v.subject_id == split.test_subject) {
                let s = net.predict_video(m, source, &v.video_id, eval_skips)?;
                if let Some(dir) = out_dir {
                    let subject_dir = dir.join("scores").join(&split.test_subject);
                    std::fs::create_dir_all(&subject_dir)
                        .map_err(|e| Error::io(subject_dir.display().to_string(), e))?;
                    s.write_csv(&subject_dir.join(format!("{}.csv", v.video_id)))?;
                }
                series.push(s);
            }
            Ok((split.test_subject.clone(), report, series))
        })
        .collect();

    let mut scores = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for (subject, report, series) in results? {
        scores.insert(subject.clone(), series);
        reports.insert(subject, report);
    }
    if let Some(dir) = out_dir {
        let path = dir.join("train_report.json");
        let json = serde_json::to_string_pretty(&reports).expect("report serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(LosoOutput { scores, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DiskFrameSource;
    use crate::model::Pooling;
    use crate::preprocess::LcnParams;
    use crate::synth::{generate, SynthConfig};
    use crate::tensor::Parameter;

    #[test]
    fn early_stopper_patience_definition() {
        // monotonically worsening validation loss: stops after epoch 6,
        // restores epoch 1
        let mut stopper = EarlyStopper::new(5);
        let losses = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6];
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            let epoch = i + 1;
            stopper.observe(epoch, l);
            if stopper.should_stop() {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(6));
        assert_eq!(stopper.best_epoch(), 1);
    }

    #[test]
    fn early_stopper_resets_on_improvement() {
        let mut stopper = EarlyStopper::new(2);
        for (epoch, loss) in [(1, 1.0), (2, 1.5), (3, 0.9), (4, 1.0)] {
            stopper.observe(epoch, loss);
            assert!(!stopper.should_stop());
        }
        stopper.observe(5, 1.2);
        assert!(stopper.should_stop());
        assert_eq!(stopper.best_epoch(), 3);
    }

    fn tiny_model(hw: usize) -> ModelConfig {
        ModelConfig {
            conv_blocks: 2,
            channels: vec![6, 12],
            spatial_strides: vec![2, 2],
            dropout_rate: 0.1,
            dense_width: 16,
            pooling: Pooling::Gap,
            input_size: (hw, hw),
            lcn: LcnParams { sigma: 1.5, radius: 5 },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn single_repeated_batch_overfits() {
        use rand::RngExt;
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..tiny_model(16)
        };
        let net = SpotterNet::build(cfg, 3).unwrap();
        let mut rng = rng_from(4, "overfit", &[]);
        let n = 4 * 2 * 16 * 16;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::new(
                vec![4, 2, 16, 16, 1],
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let s1 = mk(&mut rng);
        let s2 = mk(&mut rng);
        let targets =
            Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut opt = Sgd::new(0.05, 0.9).unwrap();
        let params = net.parameters();
        let mut last = f64::MAX;
        for step in 0..200 {
            let mut tape = Tape::new();
            let trace = net
                .forward_batch(&mut tape, s1.clone(), s2.clone(), Mode::Train, 0)
                .unwrap();
            let loss_var = ops::weighted_bce_loss(
                &mut tape,
                trace.scores,
                &targets,
                &LossWeights::default(),
                LossForm::Corrected,
            )
            .unwrap();
            last = tape.value(loss_var).item().unwrap();
            net.zero_grads();
            tape.backward(loss_var).unwrap();
            opt.step(&params);
            let _ = step;
        }
        assert!(last < 0.05, "loss after 200 steps: {last}");
    }

    fn small_dataset(dir: &Path, subjects: usize) -> Manifest {
        let cfg = SynthConfig {
            subjects,
            videos_per_subject: 1,
            frames_per_video: 150,
            image_size: (32, 32),
            me_events: 2,
            mae_events: 2,
            mae_duration: (16, 40),
            seed: 9,
            ..SynthConfig::default()
        };
        generate(&cfg, dir).unwrap().0
    }

    fn small_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            learning_rate: 0.01,
            max_epochs: 3,
            patience: 2,
            windows_per_class_per_subject: 8,
            skip_cfg: SkipConfig::Random { stream1: (2, 5), stream2: (8, 20) },
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn train_split_trains_without_touching_the_test_subject() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_dataset(dir.path(), 3);
        let source = DiskFrameSource::new(32, 32);
        let splits = loso_splits(&m).unwrap();
        let mut net = SpotterNet::build(tiny_model(32), 1).unwrap();
        let report =
            train_split(&mut net, &m, &source, &splits[0], &small_train_cfg(), None).unwrap();
        assert!(report.stop_epoch <= 3);
        assert!(report.best_epoch >= 1);
        assert_eq!(report.epoch_train_loss.len(), report.stop_epoch);
        assert!(report.epoch_train_loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn train_split_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_dataset(dir.path(), 2);
        let source = DiskFrameSource::new(32, 32);
        let splits = loso_splits(&m).unwrap();
        let run = || {
            let mut net = SpotterNet::build(tiny_model(32), 1).unwrap();
            let report =
                train_split(&mut net, &m, &source, &splits[0], &small_train_cfg(), None).unwrap();
            let params: Vec<Vec<f64>> = net
                .parameters()
                .iter()
                .map(|p: &Parameter| p.value().data().to_vec())
                .collect();
            (report.epoch_train_loss.clone(), report.epoch_val_loss.clone(), params)
        };
        let (tl1, vl1, p1) = run();
        let (tl2, vl2, p2) = run();
        assert_eq!(tl1, tl2);
        assert_eq!(vl1, vl2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn run_loso_covers_every_subject_once() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = small_dataset(dir.path(), 3);
        let source = DiskFrameSource::new(32, 32);
        let eval_skips = SkipConfig::Kth { stream1: 4, stream2: 14 };
        let output = run_loso(
            &m,
            &source,
            &tiny_model(32),
            &small_train_cfg(),
            &eval_skips,
            Some(out.path()),
        )
        .unwrap();
        let subjects = m.subjects();
        assert_eq!(output.scores.len(), subjects.len());
        for s in &subjects {
            let series = &output.scores[s];
            assert_eq!(series.len(), 1);
            assert_eq!(series[0].len(), 150);
            assert!(out
                .path()
                .join("scores")
                .join(s)
                .join(format!("{}.csv", series[0].video_id))
                .exists());
            assert!(out.path().join("checkpoints").join(format!("{s}.ckpt")).exists());
        }
        assert!(out.path().join("train_report.json").exists());
    }
}
