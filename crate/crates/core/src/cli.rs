//! The `exprspot` command-line front end.
//!
//! Every run resolves its configuration (profile defaults, then the
//! `--config` file, then flags), writes the resolved snapshot next to its
//! outputs, and exits 0 on success or a kind-specific nonzero code with a
//! single-line machine-parsable error on stderr.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{self, RunConfig};
use crate::dataset::{self, DiskFrameSource, ExprClass, Manifest};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{self, ScoreSeries, SpotterNet};
use crate::synth;
use crate::trainer;

const CONFIG_HELP: &str = "\
CONFIG KEYS (flat `key = value` file via --config, or repeatable --set key=value):
  profile                      highfps | lowfps (training recipe preset)
  seed, out, dataset, plots
  model.conv_blocks, model.channels, model.strides, model.kernel,
  model.dropout, model.dense_width, model.pooling (gap|global_max),
  model.use_lcn, model.use_batch_norm, model.bn_eps, model.bn_momentum,
  model.input_size, model.lcn_sigma, model.lcn_radius
  train.batch_size, train.learning_rate, train.momentum, train.max_epochs,
  train.patience, train.loss_w, train.loss_m_me, train.loss_m_mae,
  train.loss_paper_literal, train.skip1_lo/hi, train.skip2_lo/hi,
  train.windows_per_class_per_subject, train.val_fraction,
  train.early_stop_on_train, train.discard_clamped_windows,
  train.augment, train.augment_photometric_lo/hi, train.augment_hflip_prob,
  train.augment_rotation_deg
  eval.method (auto|msf|raw), eval.butter_order, eval.butter_cutoff,
  eval.zero_phase, eval.savgol_window, eval.savgol_polyorder,
  eval.merge_gap (auto|N), eval.iou_threshold,
  eval.threshold_policy (youden|fixed:V), eval.threshold_scope
  (per_video|global), eval.pool_classes
  skip.mode (random|kth|manual), skip.manual1, skip.manual2,
  skip.kth_reading (odd_length|odd_indexed)
  synth.subjects, synth.videos_per_subject, synth.frames, synth.fps,
  synth.me_events, synth.mae_events, synth.me_dur_lo/hi, synth.mae_dur_lo/hi,
  synth.drift, synth.co_occurrence, synth.target_move_ratio, synth.image_size

ENVIRONMENT:
  EXPRSPOT_THREADS             caps the worker thread count
";

#[derive(Parser, Debug)]
#[command(
    name = "exprspot",
    about = "Micro- and macro-expression spotting on long videos",
    after_help = CONFIG_HELP,
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Manifest CSV of the dataset to operate on.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Training recipe preset: highfps or lowfps.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Testing-time reference skips: random, kth or manual.
    #[arg(long = "skip-mode", global = true)]
    skip_mode: Option<String>,

    /// Evaluation method: auto, msf or raw.
    #[arg(long, global = true)]
    method: Option<String>,

    /// Additional key=value overrides (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-video dataset (frames + manifest.csv).
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        drift: Option<f64>,
        #[arg(long = "target-move-ratio")]
        target_move_ratio: Option<f64>,
    },
    /// Train one leave-one-subject-out split and score its test videos.
    Train {
        /// Held-out subject (defaults to the first subject).
        #[arg(long = "test-subject")]
        test_subject: Option<String>,
        /// Disable the contrast-normalisation stage.
        #[arg(long = "no-lcn")]
        no_lcn: bool,
    },
    /// Score videos with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to one video id.
        #[arg(long)]
        video: Option<String>,
    },
    /// Evaluate score CSVs against the manifest's ground truth.
    Eval {
        /// Directory of score CSVs (scores/<subject>/<video>.csv layout).
        #[arg(long)]
        scores: PathBuf,
        /// Emit per-video SVG signal plots.
        #[arg(long)]
        plots: bool,
    },
    /// Full leave-one-subject-out training over every subject.
    Loso {
        /// Disable the contrast-normalisation stage.
        #[arg(long = "no-lcn")]
        no_lcn: bool,
    },
    /// Finite-difference audit of every layer and the composed network.
    Gradcheck,
    /// Export class-activation heatmaps for one window.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        frame: usize,
        /// Target output: me or mae.
        #[arg(long)]
        target: String,
    },
    /// Per-subject movement-to-neutral ratio table.
    Stats,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::Argument(_) => "argument",
        Error::Config(_) => "config",
        Error::Validation(_) => "validation",
        Error::State(_) => "state",
        Error::NonFinite(_) => "nonfinite",
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version on stdout with code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}", error_kind(&e), msg);
            e.exit_code()
        }
    }
}

fn init_threads() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        if let Ok(v) = std::env::var("EXPRSPOT_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads();
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(d) = &cli.dataset {
        overrides.push(("dataset".into(), d.display().to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("out".into(), o.display().to_string()));
    }
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(p) = &cli.profile {
        overrides.push(("profile".into(), p.clone()));
    }
    if let Some(m) = &cli.skip_mode {
        overrides.push(("skip.mode".into(), m.clone()));
    }
    if let Some(m) = &cli.method {
        overrides.push(("eval.method".into(), m.clone()));
    }
    match &cli.command {
        Command::Synth {
            subjects,
            videos,
            frames,
            fps,
            drift,
            target_move_ratio,
        } => {
            let mut push = |k: &str, v: Option<String>| {
                if let Some(v) = v {
                    overrides.push((k.into(), v));
                }
            };
            push("synth.subjects", subjects.map(|v| v.to_string()));
            push("synth.videos_per_subject", videos.map(|v| v.to_string()));
            push("synth.frames", frames.map(|v| v.to_string()));
            push("synth.fps", fps.map(|v| v.to_string()));
            push("synth.drift", drift.map(|v| v.to_string()));
            push(
                "synth.target_move_ratio",
                target_move_ratio.map(|v| v.to_string()),
            );
        }
        Command::Train { no_lcn, .. } | Command::Loso { no_lcn } => {
            if *no_lcn {
                overrides.push(("model.use_lcn".into(), "false".into()));
            }
        }
        Command::Eval { plots, .. } => {
            if *plots {
                overrides.push(("plots".into(), "true".into()));
            }
        }
        _ => {}
    }
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects key=value, got {kv:?}"
            )));
        };
        overrides.push((k.trim().into(), v.trim().into()));
    }

    let cfg = config::resolve(cli.config.as_deref(), &overrides)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.display().to_string(), e))?;
    cfg.write_snapshot(&cfg.out.join("resolved.cfg"))?;

    match cli.command {
        Command::Synth { .. } => cmd_synth(&cfg),
        Command::Train { test_subject, .. } => cmd_train(&cfg, test_subject.as_deref()),
        Command::Predict { checkpoint, video } => cmd_predict(&cfg, &checkpoint, video.as_deref()),
        Command::Eval { scores, .. } => cmd_eval(&cfg, &scores),
        Command::Loso { .. } => cmd_loso(&cfg),
        Command::Gradcheck => cmd_gradcheck(&cfg),
        Command::Gradcam {
            checkpoint,
            video,
            frame,
            target,
        } => cmd_gradcam(&cfg, &checkpoint, &video, frame, &target),
        Command::Stats => cmd_stats(&cfg),
    }
}

fn require_dataset(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.dataset.as_ref().ok_or_else(|| {
        Error::Config("this command needs --dataset pointing at a manifest CSV".into())
    })?;
    dataset::load_manifest(path)
}

fn frame_source(cfg: &RunConfig) -> DiskFrameSource {
    DiskFrameSource::new(cfg.model.input_size.0, cfg.model.input_size.1)
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let mut synth_cfg = cfg.synth.clone();
    synth_cfg.seed = cfg.seed;
    let (manifest, planted) = synth::generate(&synth_cfg, &cfg.out)?;
    println!(
        "synth: {} subjects, {} videos, {} annotations, {} planted events -> {}",
        manifest.subjects().len(),
        manifest.videos.len(),
        manifest.annotations.len(),
        planted.len(),
        cfg.out.display()
    );
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let m = require_dataset(cfg)?;
    let path = cfg.out.join("stats.csv");
    let mut file =
        std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(file, "subject_id,movement_frames,neutral_frames,move_to_neutral_ratio")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("subject  movement  neutral  move-to-neutral");
    for subject in m.subjects() {
        let mut movement = 0usize;
        let mut neutral = 0usize;
        for v in m.videos_of_subject(&subject) {
            let labels = dataset::frame_labels(&m, &v.video_id)?;
            for t in 0..labels.len() {
                if labels.movement(t) {
                    movement += 1;
                } else {
                    neutral += 1;
                }
            }
        }
        let ratio = dataset::move_to_neutral_ratio(&m, &subject)?;
        let shown = if ratio.is_infinite() {
            "inf".to_string()
        } else {
            format!("{ratio:.4}")
        };
        println!("{subject:8} {movement:9} {neutral:8} {shown:>15}");
        writeln!(file, "{subject},{movement},{neutral},{shown}")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let layers = crate::tensor::gradcheck::audit_layers(cfg.seed)?;
    for b in &layers.blocks {
        println!("layer   {:32} rel_error {:.3e}", b.id, b.rel_error);
    }
    let network = model::audit_network(cfg.seed)?;
    for b in &network.blocks {
        println!("network {:32} rel_error {:.3e}", b.id, b.rel_error);
    }
    let max = layers.max_rel_error().max(network.max_rel_error());
    let elapsed = started.elapsed().as_secs_f64();
    println!("gradient audit: max relative error {max:.3e} (tolerance 1e-4) in {elapsed:.1}s");
    if max < 1e-4 {
        println!("gradient audit: PASS");
        Ok(())
    } else {
        Err(Error::State(format!(
            "gradient audit failed: max relative error {max:.3e} >= 1e-4"
        )))
    }
}

fn cmd_loso(cfg: &RunConfig) -> Result<()> {
    let m = require_dataset(cfg)?;
    let source = frame_source(cfg);
    let skips = cfg.eval_skips(&m)?;
    let output = trainer::run_loso(&m, &source, &cfg.model, &cfg.train, &skips, Some(&cfg.out))?;
    for (subject, report) in &output.reports {
        println!(
            "loso {subject}: stopped at epoch {} (best {}), final val loss {:.4}, {:.1}s",
            report.stop_epoch,
            report.best_epoch,
            report.epoch_val_loss.last().copied().unwrap_or(f64::NAN),
            report.wall_clock_secs
        );
    }
    println!("loso: scores and checkpoints under {}", cfg.out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, test_subject: Option<&str>) -> Result<()> {
    let m = require_dataset(cfg)?;
    let source = frame_source(cfg);
    let splits = dataset::loso_splits(&m)?;
    let (ix, split) = match test_subject {
        Some(s) => splits
            .iter()
            .enumerate()
            .find(|(_, sp)| sp.test_subject == s)
            .ok_or_else(|| Error::Validation(format!("unknown subject {s:?}")))?,
        None => (0, &splits[0]),
    };
    let mut net = SpotterNet::build(
        cfg.model.clone(),
        crate::rng::derive_seed(cfg.train.seed, "init", &[ix as u64]),
    )?;
    let ckpt = cfg
        .out
        .join("checkpoints")
        .join(format!("{}.ckpt", split.test_subject));
    let report = trainer::train_split(&mut net, &m, &source, split, &cfg.train, Some(&ckpt))?;
    println!(
        "train {}: stopped at epoch {} (best {}), train loss {:.4}, val loss {:.4}",
        split.test_subject,
        report.stop_epoch,
        report.best_epoch,
        report.epoch_train_loss.last().copied().unwrap_or(f64::NAN),
        report.epoch_val_loss.last().copied().unwrap_or(f64::NAN),
    );
    let skips = cfg.eval_skips(&m)?;
    let scores_dir = cfg.out.join("scores").join(&split.test_subject);
    std::fs::create_dir_all(&scores_dir)
        .map_err(|e| Error::io(scores_dir.display().to_string(), e))?;
    for v in m.videos_of_subject(&split.test_subject) {
        let series = net.predict_video(&m, &source, &v.video_id, &skips)?;
        series.write_csv(&scores_dir.join(format!("{}.csv", v.video_id)))?;
        println!("train: scored {} ({} frames)", v.video_id, series.len());
    }
    let report_path = cfg.out.join("train_report.json");
    let mut map = std::collections::BTreeMap::new();
    map.insert(split.test_subject.clone(), &report);
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&map).expect("report serializes") + "\n",
    )
    .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, only_video: Option<&str>) -> Result<()> {
    let m = require_dataset(cfg)?;
    let source = frame_source(cfg);
    let net = SpotterNet::build(cfg.model.clone(), cfg.seed)?;
    let ckpt = crate::checkpoint::load_checkpoint(checkpoint)?;
    net.load_from_checkpoint(&ckpt)?;
    let skips = cfg.eval_skips(&m)?;
    for v in &m.videos {
        if let Some(want) = only_video {
            if v.video_id != want {
                continue;
            }
        }
        let series = net.predict_video(&m, &source, &v.video_id, &skips)?;
        let dir = cfg.out.join("scores").join(&v.subject_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        series.write_csv(&dir.join(format!("{}.csv", v.video_id)))?;
        println!("predict: scored {} ({} frames)", v.video_id, series.len());
    }
    Ok(())
}

/// Collects score CSVs laid out as `<dir>/<subject>/<video>.csv` or flat
/// `<dir>/<video>.csv`.
fn collect_scores(dir: &Path, m: &Manifest) -> Result<Vec<ScoreSeries>> {
    let mut found = Vec::new();
    let known: BTreeSet<&str> = m.videos.iter().map(|v| v.video_id.as_str()).collect();
    let mut stack = vec![dir.to_path_buf()];
    let mut files = Vec::new();
    while let Some(d) = stack.pop() {
        let entries =
            std::fs::read_dir(&d).map_err(|e| Error::io(d.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(d.display().to_string(), e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    for path in files {
        let video_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !known.contains(video_id.as_str()) {
            return Err(Error::Validation(format!(
                "score file {} names video {video_id:?} which is not in the manifest",
                path.display()
            )));
        }
        found.push(ScoreSeries::read_csv(&path, &video_id)?);
    }
    if found.is_empty() {
        return Err(Error::Validation(format!(
            "no score CSVs found under {}",
            dir.display()
        )));
    }
    Ok(found)
}

fn cmd_eval(cfg: &RunConfig, scores_dir: &Path) -> Result<()> {
    let m = require_dataset(cfg)?;
    let scores = collect_scores(scores_dir, &m)?;
    let report = eval::evaluate(&scores, &m, &cfg.eval)?;
    let path = cfg.out.join("report.json");
    report.write_json(&path)?;
    for (class, c) in &report.per_class {
        println!(
            "eval {class}: interval F1 {:.4} (tp {} fp {} fn {}), frame F1 {:.4}, AUC {:.4}",
            c.interval.f1, c.interval.tp, c.interval.fp, c.interval.fn_, c.frame.f1, c.auc
        );
    }
    println!(
        "eval overall: interval F1 {:.4}, frame F1 {:.4} -> {}",
        report.overall.f1,
        report.frame_overall.f1,
        path.display()
    );
    if !report.missing_videos.is_empty() {
        println!("eval: missing scores for {:?}", report.missing_videos);
    }
    if cfg.plots {
        let plot_dir = cfg.out.join("plots");
        std::fs::create_dir_all(&plot_dir)
            .map_err(|e| Error::io(plot_dir.display().to_string(), e))?;
        for s in &scores {
            let (me, mae) = eval::processed_signals(s, &cfg.eval)?;
            eval::write_video_plot(
                &plot_dir.join(format!("{}.svg", s.video_id)),
                &s.video_id,
                &me,
                &mae,
                &report.per_video[&s.video_id],
            )?;
        }
        println!("eval: plots under {}", plot_dir.display());
    }
    Ok(())
}

fn cmd_gradcam(
    cfg: &RunConfig,
    checkpoint: &Path,
    video: &str,
    frame: usize,
    target: &str,
) -> Result<()> {
    let target = match target {
        "me" => ExprClass::Me,
        "mae" => ExprClass::Mae,
        other => {
            return Err(Error::Argument(format!(
                "unknown target {other:?} (expected me or mae)"
            )))
        }
    };
    let m = require_dataset(cfg)?;
    let source = frame_source(cfg);
    let net = SpotterNet::build(cfg.model.clone(), cfg.seed)?;
    let ckpt = crate::checkpoint::load_checkpoint(checkpoint)?;
    net.load_from_checkpoint(&ckpt)?;
    let skips = cfg.eval_skips(&m)?;
    let window = dataset::sample_window(&m, &source, video, frame, &skips, cfg.seed)?;
    let window = model::preprocess_window(&window, &cfg.model)?;
    let (h1, h2) = net.grad_cam(&window, target)?;
    let t = target.as_str().to_lowercase();
    for (stream, map) in [(1, &h1), (2, &h2)] {
        let path = cfg
            .out
            .join(format!("gradcam_{video}_f{frame}_{t}_stream{stream}.png"));
        crate::preprocess::save_png(map, &path)?;
        println!("gradcam: wrote {}", path.display());
    }
    Ok(())
}
