//! Deterministic synthetic long-video generator.
//!
//! Each subject gets a fixed face-like base pattern (smooth bumps plus fine
//! texture, distinct per subject so leave-one-subject-out is meaningful).
//! Expression events are additive Gaussian blobs with a triangular
//! onset-apex-offset intensity profile: short small blobs for ME, longer
//! larger ones for MaE. A slow multiplicative brightness drift provides the
//! illumination stressor that contrast normalisation is meant to absorb.

use std::path::Path;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    save_manifest, Annotation, DiskFrameSource, ExprClass, Manifest, VideoInfo,
};
use crate::error::{Error, Result};
use crate::preprocess::{save_png, Image, FRAME_SIZE};
use crate::rng::rng_from;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub videos_per_subject: usize,
    pub frames_per_video: usize,
    pub fps: f64,
    /// Inclusive ME duration range in frames; must stay below 0.5 s.
    pub me_duration: (usize, usize),
    /// Inclusive MaE duration range in frames; must stay above 0.5 s.
    pub mae_duration: (usize, usize),
    /// Events per video per class (ignored when `target_move_ratio` is set).
    pub me_events: usize,
    pub mae_events: usize,
    pub me_blob_sigma: Real,
    pub mae_blob_sigma: Real,
    pub me_amplitude: Real,
    pub mae_amplitude: Real,
    /// Relative amplitude of the multiplicative brightness drift.
    pub drift_amplitude: Real,
    /// Probability that an ME is planted inside a MaE interval.
    pub co_occurrence: f64,
    /// When set, event durations are planned so the movement-to-neutral
    /// frame ratio of every video hits this value.
    pub target_move_ratio: Option<f64>,
    pub image_size: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 8,
            videos_per_subject: 2,
            frames_per_video: 1500,
            fps: 30.0,
            me_duration: (4, 14),
            mae_duration: (16, 60),
            me_events: 3,
            mae_events: 3,
            me_blob_sigma: 5.0,
            mae_blob_sigma: 9.0,
            me_amplitude: 0.30,
            mae_amplitude: 0.30,
            drift_amplitude: 0.04,
            co_occurrence: 0.25,
            target_move_ratio: None,
            image_size: (FRAME_SIZE, FRAME_SIZE),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.videos_per_subject == 0 || self.frames_per_video < 32 {
            return Err(Error::Config(
                "need at least one subject, one video and 32 frames".into(),
            ));
        }
        if self.fps <= 0.0 {
            return Err(Error::Config(format!("fps must be > 0, got {}", self.fps)));
        }
        let half_second = (0.5 * self.fps).round() as usize;
        if self.me_duration.0 == 0 || self.me_duration.0 > self.me_duration.1 {
            return Err(Error::Config(format!(
                "bad ME duration range {:?}",
                self.me_duration
            )));
        }
        if self.mae_duration.0 > self.mae_duration.1 {
            return Err(Error::Config(format!(
                "bad MaE duration range {:?}",
                self.mae_duration
            )));
        }
        if self.me_duration.1 >= half_second {
            return Err(Error::Config(format!(
                "ME durations must stay below 0.5 s = {half_second} frames, got {:?}",
                self.me_duration
            )));
        }
        if self.mae_duration.0 <= half_second {
            return Err(Error::Config(format!(
                "MaE durations must exceed 0.5 s = {half_second} frames, got {:?}",
                self.mae_duration
            )));
        }
        if self.mae_duration.1 + 8 > self.frames_per_video {
            return Err(Error::Config(
                "videos too short for the longest MaE event".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.co_occurrence) {
            return Err(Error::Config("co-occurrence must lie in [0, 1]".into()));
        }
        if let Some(r) = self.target_move_ratio {
            if !(0.0..10.0).contains(&r) {
                return Err(Error::Config(format!(
                    "target move-to-neutral ratio out of range: {r}"
                )));
            }
        }
        Ok(())
    }
}

/// One planted event with its spatial footprint, for localisation oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEvent {
    pub video_id: String,
    pub expr_class: ExprClass,
    pub onset: usize,
    pub apex: usize,
    pub offset: usize,
    pub center: (usize, usize),
    pub sigma: Real,
    pub amplitude: Real,
}

impl PlantedEvent {
    /// Bounding box (y0, x0, y1, x1) at three sigmas, clamped to the frame.
    pub fn bounding_box(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let r = (3.0 * self.sigma).ceil() as isize;
        let (cy, cx) = (self.center.0 as isize, self.center.1 as isize);
        (
            (cy - r).max(0) as usize,
            (cx - r).max(0) as usize,
            ((cy + r).min(h as isize - 1)) as usize,
            ((cx + r).min(w as isize - 1)) as usize,
        )
    }
}

/// Subject base pattern: smooth random bumps plus fine static texture, kept
/// inside [0.15, 0.62] so drift and blobs stay clear of hard clipping.
fn base_pattern(h: usize, w: usize, seed: u64, subject: u64) -> Image {
    let mut rng = rng_from(seed, "base", &[subject]);
    let mut img = Image::filled(h, w, 0.0);
    for _ in 0..8 {
        let cy: Real = rng.random_range(0.0..h as Real);
        let cx: Real = rng.random_range(0.0..w as Real);
        let s: Real = rng.random_range(8.0..22.0);
        let a: Real = rng.random_range(-0.14..0.14);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as Real - cy).powi(2) + (x as Real - cx).powi(2);
                img.data[y * w + x] += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    // fine texture so local contrast is well defined at the LCN scale;
    // horizontal stripes only, leaving the vertical band free for events
    let py: Real = rng.random_range(4.0..7.0);
    let phy: Real = rng.random_range(0.0..6.28);
    for y in 0..h {
        let stripe = 0.26 * (2.0 * std::f64::consts::PI * y as Real / py + phy).sin();
        for x in 0..w {
            img.data[y * w + x] += stripe + 0.10 * (rng.random::<f64>() - 0.5);
        }
    }
    let (lo, hi) = img
        .data
        .iter()
        .fold((Real::MAX, Real::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    for v in &mut img.data {
        *v = 0.10 + 0.70 * (*v - lo) / (hi - lo);
    }
    img
}

/// Durations drawn from `range` until `budget` frames are covered; the last
/// draw is adjusted to land on the budget when the range allows.
fn plan_durations(budget: usize, range: (usize, usize), rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut remaining = budget;
    while remaining >= range.0 {
        let mut d = rng.random_range(range.0..=range.1).min(remaining);
        let left_after = remaining - d;
        if left_after > 0 && left_after < range.0 {
            // absorb the remainder now if the range permits
            let want = remaining.min(range.1);
            if want >= range.0 {
                d = want;
            }
        }
        out.push(d);
        remaining = remaining.saturating_sub(d);
    }
    out
}

struct EventPlan {
    class: ExprClass,
    onset: usize,
    offset: usize,
    inside_mae: bool,
}

/// Places intervals without overlap (margin 3 frames), randomized.
fn place_disjoint(
    durations: &[usize],
    class: ExprClass,
    frames: usize,
    occupied: &mut Vec<(usize, usize)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EventPlan>> {
    const MARGIN: usize = 3;
    let mut out = Vec::new();
    for &dur in durations {
        let mut placed = false;
        for _ in 0..2000 {
            if frames < dur + 2 {
                break;
            }
            let onset = rng.random_range(1..frames - dur);
            let offset = onset + dur - 1;
            let clash = occupied.iter().any(|&(a, b)| {
                onset <= b + MARGIN && a <= offset + MARGIN
            });
            if !clash {
                occupied.push((onset, offset));
                out.push(EventPlan {
                    class,
                    onset,
                    offset,
                    inside_mae: false,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place a {} event of {dur} frames; reduce events or durations",
                class.as_str()
            )));
        }
    }
    Ok(out)
}

/// Generates the dataset under `out_dir`, writing one frame directory per
/// video and `manifest.csv`. Same config (including seed) reproduces the
/// same bytes.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<(Manifest, Vec<PlantedEvent>)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let (h, w) = cfg.image_size;
    let mut videos = Vec::new();
    let mut annotations = Vec::new();
    let mut planted = Vec::new();

    for s in 0..cfg.subjects {
        let subject_id = format!("s{:02}", s + 1);
        let base = base_pattern(h, w, cfg.seed, s as u64);
        for v in 0..cfg.videos_per_subject {
            let video_id = format!("{subject_id}_v{:02}", v + 1);
            let mut rng = rng_from(cfg.seed, "video", &[s as u64, v as u64]);
            let frames = cfg.frames_per_video;

            // --- plan events ---------------------------------------------
            let (mae_durs, me_durs) = match cfg.target_move_ratio {
                Some(r) => {
                    let budget =
                        ((frames as f64) * r / (1.0 + r)).round() as usize;
                    let mae_budget = (budget as f64 * 0.7).round() as usize;
                    let mae = plan_durations(mae_budget, cfg.mae_duration, &mut rng);
                    let used: usize = mae.iter().sum();
                    let me = plan_durations(budget - used.min(budget), cfg.me_duration, &mut rng);
                    (mae, me)
                }
                None => {
                    let mae = (0..cfg.mae_events)
                        .map(|_| rng.random_range(cfg.mae_duration.0..=cfg.mae_duration.1))
                        .collect();
                    let me = (0..cfg.me_events)
                        .map(|_| rng.random_range(cfg.me_duration.0..=cfg.me_duration.1))
                        .collect();
                    (mae, me)
                }
            };

            let mut occupied: Vec<(usize, usize)> = Vec::new();
            let mut plans = place_disjoint(&mae_durs, ExprClass::Mae, frames, &mut occupied, &mut rng)?;
            let mae_spans: Vec<(usize, usize)> = plans.iter().map(|p| (p.onset, p.offset)).collect();

            // co-occurring MEs ride inside MaE intervals and add no new
            // movement frames; under a ratio target they are planted as
            // extras so the disjoint budget stays intact
            let plant_cooc = |dur: usize, rng: &mut ChaCha8Rng, plans: &mut Vec<EventPlan>| {
                let hosts: Vec<(usize, usize)> = mae_spans
                    .iter()
                    .copied()
                    .filter(|(a, b)| b - a + 1 >= dur + 4)
                    .collect();
                if hosts.is_empty() {
                    return false;
                }
                let (a, b) = hosts[rng.random_range(0..hosts.len())];
                let onset = rng.random_range(a + 1..=b - dur);
                plans.push(EventPlan {
                    class: ExprClass::Me,
                    onset,
                    offset: onset + dur - 1,
                    inside_mae: true,
                });
                true
            };
            let mut disjoint_me = Vec::new();
            if cfg.target_move_ratio.is_some() {
                disjoint_me = me_durs.clone();
                for _ in &mae_spans {
                    if rng.random::<f64>() < cfg.co_occurrence {
                        let dur = rng.random_range(cfg.me_duration.0..=cfg.me_duration.1);
                        plant_cooc(dur, &mut rng, &mut plans);
                    }
                }
            } else {
                for &dur in &me_durs {
                    if rng.random::<f64>() < cfg.co_occurrence
                        && plant_cooc(dur, &mut rng, &mut plans)
                    {
                        continue;
                    }
                    disjoint_me.push(dur);
                }
            }
            plans.extend(place_disjoint(
                &disjoint_me,
                ExprClass::Me,
                frames,
                &mut occupied,
                &mut rng,
            )?);

            // --- materialise events --------------------------------------
            struct Blob {
                onset: usize,
                apex: usize,
                offset: usize,
                cy: Real,
                cx: Real,
                sigma: Real,
                amp: Real,
                grating_period: Real,
                grating_phase: Real,
            }
            let mut blobs = Vec::new();
            for p in &plans {
                let (sigma, amp) = match p.class {
                    ExprClass::Me => (cfg.me_blob_sigma, cfg.me_amplitude),
                    ExprClass::Mae => (cfg.mae_blob_sigma, cfg.mae_amplitude),
                };
                let margin = (2.0 * sigma).ceil().min(h as Real / 2.0 - 2.0).min(w as Real / 2.0 - 2.0).max(1.0);
                let cy: Real = rng.random_range(margin..h as Real - margin);
                let cx: Real = rng.random_range(margin..w as Real - margin);
                let apex = (p.onset + p.offset) / 2;
                let _ = p.inside_mae;
                annotations.push(Annotation {
                    subject_id: subject_id.clone(),
                    video_id: video_id.clone(),
                    onset: p.onset,
                    apex: Some(apex),
                    offset: p.offset,
                    expr_class: p.class,
                });
                planted.push(PlantedEvent {
                    video_id: video_id.clone(),
                    expr_class: p.class,
                    onset: p.onset,
                    apex,
                    offset: p.offset,
                    center: (cy.round() as usize, cx.round() as usize),
                    sigma,
                    amplitude: amp,
                });
                blobs.push(Blob {
                    onset: p.onset,
                    apex,
                    offset: p.offset,
                    cy,
                    cx,
                    sigma,
                    amp,
                    grating_period: rng.random_range(3.0..4.0),
                    grating_phase: rng.random_range(0.0..6.28),
                });
            }

            // --- render frames --------------------------------------------
            let dir = out_dir.join(&video_id);
            std::fs::create_dir_all(&dir)
                .map_err(|e| Error::io(dir.display().to_string(), e))?;
            let drift_period: Real = rng.random_range(240.0..420.0);
            let drift_phase: Real = rng.random_range(0.0..6.28);
            let mut frame = Image::filled(h, w, 0.0);
            for t in 0..frames {
                frame.data.copy_from_slice(&base.data);
                for b in &blobs {
                    if t < b.onset || t > b.offset {
                        continue;
                    }
                    // triangular profile with a floor so onset/offset frames
                    // still carry signal
                    let tri = if t <= b.apex {
                        (t - b.onset + 1) as Real / (b.apex - b.onset + 1) as Real
                    } else {
                        (b.offset - t + 1) as Real / (b.offset - b.apex + 1) as Real
                    };
                    let strength = b.amp * (0.25 + 0.75 * tri);
                    let r = (3.0 * b.sigma).ceil() as isize;
                    let (cyi, cxi) = (b.cy.round() as isize, b.cx.round() as isize);
                    // a textured (vertical grating) patch rather than a
                    // smooth bump: appearance changes must carry local
                    // contrast or the normalisation stage would remove them
                    // the way it removes the brightness drift; the base
                    // texture is horizontal, so orientation separates them
                    let freq = 2.0 * std::f64::consts::PI / b.grating_period;
                    for y in (cyi - r).max(0)..=(cyi + r).min(h as isize - 1) {
                        for x in (cxi - r).max(0)..=(cxi + r).min(w as isize - 1) {
                            let d2 = (y as Real - b.cy).powi(2) + (x as Real - b.cx).powi(2);
                            let envelope = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                            let grating = (freq * x as Real + b.grating_phase).sin();
                            frame.data[y as usize * w + x as usize] +=
                                strength * envelope * (0.4 + 0.6 * grating);
                        }
                    }
                }
                let drift = 1.0
                    + cfg.drift_amplitude
                        * (2.0 * std::f64::consts::PI * t as Real / drift_period + drift_phase)
                            .sin();
                for v in &mut frame.data {
                    *v = (*v * drift).clamp(0.0, 1.0);
                }
                save_png(&frame, &DiskFrameSource::frame_path(&dir, t))?;
            }

            videos.push(VideoInfo {
                video_id,
                subject_id: subject_id.clone(),
                frame_dir: dir,
                frame_count: frames,
            });
        }
    }

    let manifest = Manifest {
        name: "synthetic".into(),
        fps: cfg.fps,
        videos,
        annotations,
    };
    manifest.validate()?;
    save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok((manifest, planted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{self, load_manifest};
    use crate::preprocess::{lcn_normalize, LcnParams};

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            subjects: 2,
            videos_per_subject: 1,
            frames_per_video: 240,
            image_size: (48, 48),
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_reproduces_identical_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        generate(&cfg, d1.path()).unwrap();
        generate(&cfg, d2.path()).unwrap();
        for probe in ["s01_v01/000001.png", "s01_v01/000120.png", "s02_v01/000240.png"] {
            let a = std::fs::read(d1.path().join(probe)).unwrap();
            let b = std::fs::read(d2.path().join(probe)).unwrap();
            assert_eq!(a, b, "frame {probe} differs");
        }
        // manifests identical modulo the temp directory prefix
        let strip = |root: &Path| {
            std::fs::read_to_string(root.join("manifest.csv"))
                .unwrap()
                .replace(&root.display().to_string(), "")
        };
        assert_eq!(strip(d1.path()), strip(d2.path()));
    }

    #[test]
    fn zero_events_gives_all_neutral_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            me_events: 0,
            mae_events: 0,
            frames_per_video: 120,
            subjects: 1,
            videos_per_subject: 1,
            image_size: (32, 32),
            ..SynthConfig::default()
        };
        let (m, planted) = generate(&cfg, dir.path()).unwrap();
        assert!(m.annotations.is_empty());
        assert!(planted.is_empty());
        assert_eq!(dataset::move_to_neutral_ratio(&m, "s01").unwrap(), 0.0);
    }

    #[test]
    fn generated_manifest_passes_validation_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let (m, planted) = generate(&small_cfg(), dir.path()).unwrap();
        m.validate().unwrap();
        let reloaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(reloaded.annotations.len(), m.annotations.len());
        assert_eq!(reloaded.videos.len(), m.videos.len());
        assert!(!planted.is_empty());
        // frame files exist
        let src = dataset::DiskFrameSource::new(48, 48);
        let img = dataset::FrameSource::load(&src, &reloaded.videos[0], 0).unwrap();
        assert_eq!((img.height, img.width), (48, 48));
    }

    #[test]
    fn durations_respect_the_half_second_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            subjects: 3,
            videos_per_subject: 2,
            frames_per_video: 400,
            image_size: (32, 32),
            seed: 5,
            ..SynthConfig::default()
        };
        let (m, _) = generate(&cfg, dir.path()).unwrap();
        let half = (0.5 * cfg.fps).round() as usize;
        let mut seen_me = false;
        let mut seen_mae = false;
        for a in &m.annotations {
            let dur = a.offset - a.onset + 1;
            match a.expr_class {
                ExprClass::Me => {
                    seen_me = true;
                    assert!(dur < half, "ME duration {dur}");
                }
                ExprClass::Mae => {
                    seen_mae = true;
                    assert!(dur > half, "MaE duration {dur}");
                }
            }
        }
        assert!(seen_me && seen_mae);
    }

    #[test]
    fn move_ratio_targeting_hits_forty_and_five_percent() {
        for (target, seed) in [(0.40, 21u64), (0.05, 22u64)] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = SynthConfig {
                subjects: 2,
                videos_per_subject: 1,
                frames_per_video: 1200,
                image_size: (32, 32),
                target_move_ratio: Some(target),
                seed,
                ..SynthConfig::default()
            };
            let (m, _) = generate(&cfg, dir.path()).unwrap();
            // counting oracle over the generated labels
            for subject in m.subjects() {
                let r = dataset::move_to_neutral_ratio(&m, &subject).unwrap();
                assert!(
                    (r - target).abs() / target <= 0.02,
                    "subject {subject}: ratio {r} vs target {target}"
                );
            }
        }
    }

    #[test]
    fn drift_alone_is_invisible_after_lcn() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            subjects: 1,
            videos_per_subject: 1,
            frames_per_video: 90,
            me_events: 0,
            mae_events: 0,
            drift_amplitude: 0.12,
            image_size: (64, 64),
            seed: 33,
            ..SynthConfig::default()
        };
        let (m, _) = generate(&cfg, dir.path()).unwrap();
        let src = dataset::DiskFrameSource::new(64, 64);
        let p = LcnParams::default();
        let video = &m.videos[0];
        let first = lcn_normalize(&dataset::FrameSource::load(&src, video, 0).unwrap(), &p).unwrap();
        let mut worst = 0.0 as Real;
        for t in (10..90).step_by(10) {
            let img = dataset::FrameSource::load(&src, video, t).unwrap();
            let normed = lcn_normalize(&img, &p).unwrap();
            for (a, b) in normed.data.iter().zip(&first.data) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 0.05, "LCN drift residue {worst}");
    }
}
