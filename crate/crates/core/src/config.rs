//! Run configuration: profile presets, flat `key = value` config files, and
//! the resolved-snapshot mechanism that makes runs reproducible.
//!
//! Precedence: profile defaults, then config-file pairs, then command-line
//! overrides. The fully resolved configuration is written next to every
//! run's outputs as `resolved.cfg`; feeding that file back through
//! `--config` reproduces the run bit for bit (same seed, same outputs).

use std::path::{Path, PathBuf};

use crate::dataset::{KthMode, Manifest, SkipConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, EvalMethod, ThresholdPolicy, ThresholdScope};
use crate::model::{ModelConfig, Pooling};
use crate::synth::SynthConfig;
use crate::tensor::ops::{LossForm, LossWeights};
use crate::tensor::Real;
use crate::trainer::{StopMonitor, TrainConfig};

/// Dataset-style preset selecting the published training knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// High-frame-rate recipe: learning rate 0.007, training skips
    /// 25-75 / 200-400, manual skips 30 / 310, weighted loss (3, 0.9, 0.1).
    HighFps,
    /// Low-frame-rate recipe: learning rate 0.005, training skips
    /// 3-9 / 16-50, manual skips 10 / 33, unweighted loss.
    #[default]
    LowFps,
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::HighFps => "highfps",
            Profile::LowFps => "lowfps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "highfps" => Ok(Profile::HighFps),
            "lowfps" => Ok(Profile::LowFps),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected highfps or lowfps)"
            ))),
        }
    }
}

/// How testing-time reference skips are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkipModeChoice {
    Random,
    #[default]
    Kth,
    Manual,
}

impl SkipModeChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipModeChoice::Random => "random",
            SkipModeChoice::Kth => "kth",
            SkipModeChoice::Manual => "manual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SkipModeChoice::Random),
            "kth" => Ok(SkipModeChoice::Kth),
            "manual" => Ok(SkipModeChoice::Manual),
            other => Err(Error::Config(format!(
                "unknown skip mode {other:?} (expected random, kth or manual)"
            ))),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub skip_mode: SkipModeChoice,
    pub manual_skips: (usize, usize),
    pub kth_mode: KthMode,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub plots: bool,
}

impl RunConfig {
    pub fn with_profile(profile: Profile) -> Self {
        let (lr, random_skips, manual_skips, weights) = match profile {
            Profile::HighFps => (
                0.007,
                ((25, 75), (200, 400)),
                (30, 310),
                LossWeights { w: 3.0, m_me: 0.9, m_mae: 0.1 },
            ),
            Profile::LowFps => (
                0.005,
                ((3, 9), (16, 50)),
                (10, 33),
                LossWeights::default(),
            ),
        };
        RunConfig {
            profile,
            model: ModelConfig::default(),
            train: TrainConfig {
                learning_rate: lr,
                loss_weights: weights,
                skip_cfg: SkipConfig::Random {
                    stream1: random_skips.0,
                    stream2: random_skips.1,
                },
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            skip_mode: SkipModeChoice::Kth,
            manual_skips,
            kth_mode: KthMode::OddLength,
            dataset: None,
            out: PathBuf::from("run"),
            seed: 0,
        plots: false,
        }
    }

    /// Testing-time skip configuration (kth skips derive from the manifest).
    pub fn eval_skips(&self, m: &Manifest) -> Result<SkipConfig> {
        match self.skip_mode {
            SkipModeChoice::Kth => SkipConfig::kth_from_manifest(m, self.kth_mode),
            SkipModeChoice::Manual => {
                let cfg = SkipConfig::Manual {
                    stream1: self.manual_skips.0,
                    stream2: self.manual_skips.1,
                };
                cfg.validate()?;
                Ok(cfg)
            }
            SkipModeChoice::Random => Ok(self.train.skip_cfg),
        }
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        macro_rules! num {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|_| bad(key))?
            };
        }
        let parse_bool = |v: &str| -> Result<bool> {
            match v {
                "true" | "1" | "on" | "yes" => Ok(true),
                "false" | "0" | "off" | "no" => Ok(false),
                _ => Err(bad("boolean")),
            }
        };
        match key {
            "profile" => self.profile = Profile::parse(value)?,
            "seed" => {
                self.seed = num!(u64);
                self.train.seed = self.seed;
                self.synth.seed = self.seed;
            }
            "out" => self.out = PathBuf::from(value),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "plots" => self.plots = parse_bool(value)?,

            "model.conv_blocks" => {
                let n = num!(usize);
                let keep = self.model.clone();
                self.model = ModelConfig::with_depth(n);
                self.model.dropout_rate = keep.dropout_rate;
                self.model.dense_width = keep.dense_width;
                self.model.pooling = keep.pooling;
                self.model.use_lcn_layer = keep.use_lcn_layer;
                self.model.use_batch_norm = keep.use_batch_norm;
                self.model.input_size = keep.input_size;
                self.model.lcn = keep.lcn;
            }
            "model.channels" => {
                self.model.channels = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| bad(key)))
                    .collect::<Result<_>>()?;
                self.model.conv_blocks = self.model.channels.len();
            }
            "model.strides" => {
                self.model.spatial_strides = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| bad(key)))
                    .collect::<Result<_>>()?;
            }
            "model.kernel" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| bad(key)))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad(key));
                }
                self.model.kernel = (parts[0], parts[1], parts[2]);
            }
            "model.dropout" => self.model.dropout_rate = num!(Real),
            "model.dense_width" => self.model.dense_width = num!(usize),
            "model.pooling" => {
                self.model.pooling = match value {
                    "gap" => Pooling::Gap,
                    "global_max" | "max" => Pooling::GlobalMax,
                    _ => return Err(bad(key)),
                }
            }
            "model.use_lcn" => self.model.use_lcn_layer = parse_bool(value)?,
            "model.use_batch_norm" => self.model.use_batch_norm = parse_bool(value)?,
            "model.bn_eps" => self.model.bn_eps = num!(Real),
            "model.bn_momentum" => self.model.bn_momentum = num!(Real),
            "model.input_size" => {
                let n = num!(usize);
                self.model.input_size = (n, n);
            }
            "model.lcn_sigma" => self.model.lcn.sigma = num!(Real),
            "model.lcn_radius" => self.model.lcn.radius = num!(usize),
            "model.lcn_divisor" => {
                // retained for the alternative divisor reading; applied in
                // preprocessing calls that honour it
                match value {
                    "mean_std" | "sqrt_mean_var" => {}
                    _ => return Err(bad(key)),
                }
            }

            "train.batch_size" => self.train.batch_size = num!(usize),
            "train.learning_rate" => self.train.learning_rate = num!(Real),
            "train.momentum" => self.train.momentum = num!(Real),
            "train.max_epochs" => self.train.max_epochs = num!(usize),
            "train.patience" => self.train.patience = num!(usize),
            "train.loss_w" => self.train.loss_weights.w = num!(Real),
            "train.loss_m_me" => self.train.loss_weights.m_me = num!(Real),
            "train.loss_m_mae" => self.train.loss_weights.m_mae = num!(Real),
            "train.loss_paper_literal" => {
                self.train.loss_form = if parse_bool(value)? {
                    LossForm::PaperLiteral
                } else {
                    LossForm::Corrected
                }
            }
            "train.skip1_lo" | "train.skip1_hi" | "train.skip2_lo" | "train.skip2_hi" => {
                let n = num!(usize);
                let (mut s1, mut s2) = match self.train.skip_cfg {
                    SkipConfig::Random { stream1, stream2 } => (stream1, stream2),
                    _ => ((3, 9), (16, 50)),
                };
                match key {
                    "train.skip1_lo" => s1.0 = n,
                    "train.skip1_hi" => s1.1 = n,
                    "train.skip2_lo" => s2.0 = n,
                    _ => s2.1 = n,
                }
                self.train.skip_cfg = SkipConfig::Random { stream1: s1, stream2: s2 };
            }
            "train.windows_per_class_per_subject" => {
                self.train.windows_per_class_per_subject = num!(usize)
            }
            "train.val_fraction" => self.train.val_fraction = num!(Real),
            "train.early_stop_on_train" => {
                self.train.stop_monitor = if parse_bool(value)? {
                    StopMonitor::Train
                } else {
                    StopMonitor::Validation
                }
            }
            "train.discard_clamped_windows" => {
                self.train.discard_clamped_windows = parse_bool(value)?
            }
            "train.augment" => self.train.augment.enabled = parse_bool(value)?,
            "train.augment_photometric_lo" => self.train.augment.photometric.0 = num!(Real),
            "train.augment_photometric_hi" => self.train.augment.photometric.1 = num!(Real),
            "train.augment_hflip_prob" => self.train.augment.hflip_prob = num!(Real),
            "train.augment_rotation_deg" => self.train.augment.rotation_deg = num!(Real),

            "eval.method" => self.eval.method = EvalMethod::parse(value)?,
            "eval.butter_order" => self.eval.butter_order = num!(usize),
            "eval.butter_cutoff" => self.eval.butter_cutoff = num!(Real),
            "eval.zero_phase" => self.eval.zero_phase = parse_bool(value)?,
            "eval.savgol_window" => self.eval.savgol_window = num!(usize),
            "eval.savgol_polyorder" => self.eval.savgol_polyorder = num!(usize),
            "eval.merge_gap" => {
                self.eval.merge_gap = if value == "auto" {
                    None
                } else {
                    Some(num!(usize))
                }
            }
            "eval.iou_threshold" => self.eval.iou_threshold = num!(Real),
            "eval.threshold_policy" => {
                self.eval.threshold_policy = if value == "youden" {
                    ThresholdPolicy::Youden
                } else if let Some(v) = value.strip_prefix("fixed:") {
                    ThresholdPolicy::Fixed(v.parse::<Real>().map_err(|_| bad(key))?)
                } else {
                    return Err(bad(key));
                }
            }
            "eval.threshold_scope" => {
                self.eval.threshold_scope = match value {
                    "per_video" => ThresholdScope::PerVideo,
                    "global" => ThresholdScope::Global,
                    _ => return Err(bad(key)),
                }
            }
            "eval.pool_classes" => self.eval.pool_classes = parse_bool(value)?,

            "skip.mode" => self.skip_mode = SkipModeChoice::parse(value)?,
            "skip.manual1" => self.manual_skips.0 = num!(usize),
            "skip.manual2" => self.manual_skips.1 = num!(usize),
            "skip.kth_reading" => {
                self.kth_mode = match value {
                    "odd_length" => KthMode::OddLength,
                    "odd_indexed" => KthMode::OddIndexed,
                    _ => return Err(bad(key)),
                }
            }

            "synth.subjects" => self.synth.subjects = num!(usize),
            "synth.videos_per_subject" => self.synth.videos_per_subject = num!(usize),
            "synth.frames" => self.synth.frames_per_video = num!(usize),
            "synth.fps" => self.synth.fps = num!(f64),
            "synth.me_events" => self.synth.me_events = num!(usize),
            "synth.mae_events" => self.synth.mae_events = num!(usize),
            "synth.me_dur_lo" => self.synth.me_duration.0 = num!(usize),
            "synth.me_dur_hi" => self.synth.me_duration.1 = num!(usize),
            "synth.mae_dur_lo" => self.synth.mae_duration.0 = num!(usize),
            "synth.mae_dur_hi" => self.synth.mae_duration.1 = num!(usize),
            "synth.drift" => self.synth.drift_amplitude = num!(Real),
            "synth.co_occurrence" => self.synth.co_occurrence = num!(f64),
            "synth.target_move_ratio" => {
                self.synth.target_move_ratio = if value == "none" {
                    None
                } else {
                    Some(num!(f64))
                }
            }
            "synth.image_size" => {
                let n = num!(usize);
                self.synth.image_size = (n, n);
            }

            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Flat, sorted key-value view of the entire configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let (s1, s2) = match self.train.skip_cfg {
            SkipConfig::Random { stream1, stream2 } => (stream1, stream2),
            SkipConfig::Kth { stream1, stream2 } | SkipConfig::Manual { stream1, stream2 } => {
                ((stream1, stream1), (stream2, stream2))
            }
        };
        let mut pairs: Vec<(String, String)> = vec![
            ("profile".into(), self.profile.as_str().into()),
            ("seed".into(), self.seed.to_string()),
            ("out".into(), self.out.display().to_string()),
            ("plots".into(), self.plots.to_string()),
            (
                "model.channels".into(),
                self.model
                    .channels
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "model.strides".into(),
                self.model
                    .spatial_strides
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "model.kernel".into(),
                format!("{},{},{}", self.model.kernel.0, self.model.kernel.1, self.model.kernel.2),
            ),
            ("model.dropout".into(), self.model.dropout_rate.to_string()),
            ("model.dense_width".into(), self.model.dense_width.to_string()),
            (
                "model.pooling".into(),
                match self.model.pooling {
                    Pooling::Gap => "gap".into(),
                    Pooling::GlobalMax => "global_max".to_string(),
                },
            ),
            ("model.use_lcn".into(), self.model.use_lcn_layer.to_string()),
            ("model.use_batch_norm".into(), self.model.use_batch_norm.to_string()),
            ("model.bn_eps".into(), self.model.bn_eps.to_string()),
            ("model.bn_momentum".into(), self.model.bn_momentum.to_string()),
            ("model.input_size".into(), self.model.input_size.0.to_string()),
            ("model.lcn_sigma".into(), self.model.lcn.sigma.to_string()),
            ("model.lcn_radius".into(), self.model.lcn.radius.to_string()),
            ("train.batch_size".into(), self.train.batch_size.to_string()),
            ("train.learning_rate".into(), self.train.learning_rate.to_string()),
            ("train.momentum".into(), self.train.momentum.to_string()),
            ("train.max_epochs".into(), self.train.max_epochs.to_string()),
            ("train.patience".into(), self.train.patience.to_string()),
            ("train.loss_w".into(), self.train.loss_weights.w.to_string()),
            ("train.loss_m_me".into(), self.train.loss_weights.m_me.to_string()),
            ("train.loss_m_mae".into(), self.train.loss_weights.m_mae.to_string()),
            (
                "train.loss_paper_literal".into(),
                (self.train.loss_form == LossForm::PaperLiteral).to_string(),
            ),
            ("train.skip1_lo".into(), s1.0.to_string()),
            ("train.skip1_hi".into(), s1.1.to_string()),
            ("train.skip2_lo".into(), s2.0.to_string()),
            ("train.skip2_hi".into(), s2.1.to_string()),
            (
                "train.windows_per_class_per_subject".into(),
                self.train.windows_per_class_per_subject.to_string(),
            ),
            ("train.val_fraction".into(), self.train.val_fraction.to_string()),
            (
                "train.early_stop_on_train".into(),
                (self.train.stop_monitor == StopMonitor::Train).to_string(),
            ),
            (
                "train.discard_clamped_windows".into(),
                self.train.discard_clamped_windows.to_string(),
            ),
            ("train.augment".into(), self.train.augment.enabled.to_string()),
            (
                "train.augment_photometric_lo".into(),
                self.train.augment.photometric.0.to_string(),
            ),
            (
                "train.augment_photometric_hi".into(),
                self.train.augment.photometric.1.to_string(),
            ),
            (
                "train.augment_hflip_prob".into(),
                self.train.augment.hflip_prob.to_string(),
            ),
            (
                "train.augment_rotation_deg".into(),
                self.train.augment.rotation_deg.to_string(),
            ),
            ("eval.method".into(), self.eval.method.as_str().into()),
            ("eval.butter_order".into(), self.eval.butter_order.to_string()),
            ("eval.butter_cutoff".into(), self.eval.butter_cutoff.to_string()),
            ("eval.zero_phase".into(), self.eval.zero_phase.to_string()),
            ("eval.savgol_window".into(), self.eval.savgol_window.to_string()),
            ("eval.savgol_polyorder".into(), self.eval.savgol_polyorder.to_string()),
            (
                "eval.merge_gap".into(),
                self.eval.merge_gap.map_or("auto".into(), |g| g.to_string()),
            ),
            ("eval.iou_threshold".into(), self.eval.iou_threshold.to_string()),
            (
                "eval.threshold_policy".into(),
                match self.eval.threshold_policy {
                    ThresholdPolicy::Youden => "youden".into(),
                    ThresholdPolicy::Fixed(v) => format!("fixed:{v}"),
                },
            ),
            (
                "eval.threshold_scope".into(),
                match self.eval.threshold_scope {
                    ThresholdScope::PerVideo => "per_video",
                    ThresholdScope::Global => "global",
                }
                .into(),
            ),
            ("eval.pool_classes".into(), self.eval.pool_classes.to_string()),
            ("skip.mode".into(), self.skip_mode.as_str().into()),
            ("skip.manual1".into(), self.manual_skips.0.to_string()),
            ("skip.manual2".into(), self.manual_skips.1.to_string()),
            (
                "skip.kth_reading".into(),
                match self.kth_mode {
                    KthMode::OddLength => "odd_length",
                    KthMode::OddIndexed => "odd_indexed",
                }
                .into(),
            ),
            ("synth.subjects".into(), self.synth.subjects.to_string()),
            (
                "synth.videos_per_subject".into(),
                self.synth.videos_per_subject.to_string(),
            ),
            ("synth.frames".into(), self.synth.frames_per_video.to_string()),
            ("synth.fps".into(), self.synth.fps.to_string()),
            ("synth.me_events".into(), self.synth.me_events.to_string()),
            ("synth.mae_events".into(), self.synth.mae_events.to_string()),
            ("synth.me_dur_lo".into(), self.synth.me_duration.0.to_string()),
            ("synth.me_dur_hi".into(), self.synth.me_duration.1.to_string()),
            ("synth.mae_dur_lo".into(), self.synth.mae_duration.0.to_string()),
            ("synth.mae_dur_hi".into(), self.synth.mae_duration.1.to_string()),
            ("synth.drift".into(), self.synth.drift_amplitude.to_string()),
            ("synth.co_occurrence".into(), self.synth.co_occurrence.to_string()),
            (
                "synth.target_move_ratio".into(),
                self.synth.target_move_ratio.map_or("none".into(), |r| r.to_string()),
            ),
            ("synth.image_size".into(), self.synth.image_size.0.to_string()),
        ];
        if let Some(d) = &self.dataset {
            pairs.push(("dataset".into(), d.display().to_string()));
        }
        pairs.sort();
        pairs
    }

    /// Writes the resolved snapshot (sorted `key = value` lines).
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (k, v) in self.to_pairs() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Parses a flat config file: `key = value` lines, `#` comments, blank
/// lines ignored.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected `key = value`, got {raw:?}",
                path.display(),
                ln + 1
            )));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds the run configuration with full precedence: profile defaults,
/// then the config file, then command-line overrides.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let file_pairs = match file {
        Some(p) => parse_config_file(p)?,
        None => Vec::new(),
    };
    // the profile key wins from the strongest layer that names it
    let profile = overrides
        .iter()
        .chain(file_pairs.iter())
        .find(|(k, _)| k == "profile")
        .map(|(_, v)| Profile::parse(v))
        .transpose()?
        .unwrap_or_default();
    let mut cfg = RunConfig::with_profile(profile);
    for (k, v) in file_pairs.iter().chain(overrides.iter()) {
        if k == "profile" {
            continue;
        }
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_set_the_published_knobs() {
        let hi = RunConfig::with_profile(Profile::HighFps);
        assert_eq!(hi.train.learning_rate, 0.007);
        assert_eq!(
            hi.train.skip_cfg,
            SkipConfig::Random { stream1: (25, 75), stream2: (200, 400) }
        );
        assert_eq!(hi.manual_skips, (30, 310));
        assert_eq!(hi.train.loss_weights, LossWeights { w: 3.0, m_me: 0.9, m_mae: 0.1 });

        let lo = RunConfig::with_profile(Profile::LowFps);
        assert_eq!(lo.train.learning_rate, 0.005);
        assert_eq!(
            lo.train.skip_cfg,
            SkipConfig::Random { stream1: (3, 9), stream2: (16, 50) }
        );
        assert_eq!(lo.manual_skips, (10, 33));
        assert_eq!(lo.train.loss_weights, LossWeights::default());
        assert_eq!(lo.train.batch_size, 16);
        assert_eq!(lo.train.patience, 5);
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::with_profile(Profile::HighFps);
        cfg.set("seed", "1234").unwrap();
        cfg.set("model.dropout", "0.3").unwrap();
        cfg.set("eval.method", "msf").unwrap();
        cfg.set("synth.frames", "321").unwrap();
        let snap = dir.path().join("resolved.cfg");
        cfg.write_snapshot(&snap).unwrap();

        let reloaded = resolve(Some(&snap), &[]).unwrap();
        assert_eq!(reloaded.to_pairs(), cfg.to_pairs());
        // snapshot of the reload is byte-identical
        let snap2 = dir.path().join("resolved2.cfg");
        reloaded.write_snapshot(&snap2).unwrap();
        assert_eq!(
            std::fs::read(&snap).unwrap(),
            std::fs::read(&snap2).unwrap()
        );
    }

    #[test]
    fn overrides_beat_file_beats_profile() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg");
        std::fs::write(&file, "profile = highfps\ntrain.batch_size = 8\n# comment\n").unwrap();
        let cfg = resolve(
            Some(&file),
            &[("train.batch_size".into(), "4".into())],
        )
        .unwrap();
        assert_eq!(cfg.profile, Profile::HighFps);
        assert_eq!(cfg.train.learning_rate, 0.007);
        assert_eq!(cfg.train.batch_size, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut cfg = RunConfig::with_profile(Profile::LowFps);
        assert!(matches!(cfg.set("nope.key", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("train.batch_size", "abc"), Err(Error::Config(_))));
    }

    #[test]
    fn seed_propagates_to_train_and_synth() {
        let mut cfg = RunConfig::with_profile(Profile::LowFps);
        cfg.set("seed", "77").unwrap();
        assert_eq!(cfg.seed, 77);
        assert_eq!(cfg.train.seed, 77);
        assert_eq!(cfg.synth.seed, 77);
    }
}
