//! Dataset assembly from labelled videos and the minibatch training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keyboard_region::{resolve_box, select_box, BoundingBox, DetectionSet};
use crate::model::{
    adamw_step, grad, init_params, lr_schedule, save_checkpoint, AdamWConfig, AdamWState, InputNorm, ModelConfig,
    ModelParams,
};
use crate::par;
use crate::preprocess::{add_noise, crop_and_prepare, jitter_box, JitterRange, ModelImage, PreprocSettings};
use crate::synthkbd::{DETECTIONS_FILE, MANIFEST_FILE, MIDI_FILE};
use crate::targets::{cull_empty, onsets_to_frames, parse_smf, window_label, KEEP_EMPTY_FRACTION, NUM_KEYS};
use crate::transcribe::assemble_clip;
use crate::video_io::{read_frame, read_manifest, window_count, VideoManifest, WINDOW_LEN};

/// Derive an independent seed for one named consumer of randomness.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finaliser
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The three files describing one labelled video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSource {
    pub manifest: PathBuf,
    pub midi: PathBuf,
    pub detections: PathBuf,
}

impl VideoSource {
    /// The layout written by the synthetic generator.
    pub fn from_dir(dir: &Path) -> Self {
        VideoSource {
            manifest: dir.join(MANIFEST_FILE),
            midi: dir.join(MIDI_FILE),
            detections: dir.join(DETECTIONS_FILE),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub preproc: PreprocSettings,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub steps: u64,
    pub class_weight: f64,
    pub optimizer: AdamWConfig,
    pub keep_empty: f64,
    pub jitter: JitterRange,
    /// Standard deviation of Gaussian input noise, in model-input units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            preproc: PreprocSettings::default(),
            batch: 16,
            base_lr: 6.25e-5,
            warmup_frac: 0.05,
            steps: 1000,
            class_weight: 1.0,
            optimizer: AdamWConfig::default(),
            keep_empty: KEEP_EMPTY_FRACTION,
            jitter: JitterRange { lo: 0, hi: 0 },
            noise: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.model.frames != WINDOW_LEN {
            return bad(format!("model must take {WINDOW_LEN}-frame clips, got {}", self.model.frames));
        }
        if self.model.resolution != self.preproc.resolution
            || self.model.channels != self.preproc.color.channels()
        {
            return bad(format!(
                "model {} does not match preprocessing ({}px, {} channel(s))",
                self.model,
                self.preproc.resolution,
                self.preproc.color.channels()
            ));
        }
        if self.batch == 0 || self.steps == 0 {
            return bad("batch size and step count must be positive".into());
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup fraction must lie in [0, 1), got {}", self.warmup_frac));
        }
        if !(self.class_weight >= 1.0) || !self.class_weight.is_finite() {
            return bad(format!("class weight must be at least 1, got {}", self.class_weight));
        }
        if !(0.0..=1.0).contains(&self.keep_empty) {
            return bad(format!("empty-window keep fraction must lie in [0, 1], got {}", self.keep_empty));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if self.optimizer.weight_decay < 0.0 {
            return bad("weight decay must be non-negative".into());
        }
        Ok(())
    }
}

struct Video {
    manifest: VideoManifest,
    keyboard: BoundingBox,
    /// Preprocessed frames; absent when crops are jittered per sample.
    frames: Option<Vec<ModelImage>>,
}

#[derive(Clone, Debug)]
struct Sample {
    video: usize,
    start: usize,
    target: [f32; NUM_KEYS],
}

/// Every kept training window across the source videos.
pub struct Dataset {
    videos: Vec<Video>,
    samples: Vec<Sample>,
    preproc: PreprocSettings,
    pub total_windows: usize,
    /// Input standardization fitted to the training frames.
    pub input: InputNorm,
}

/// Frames sampled per video to fit the input standardization when frames
/// are not cached.
const NORM_SAMPLE_FRAMES: usize = 256;

impl Dataset {
    /// Label every stride-1 window and cull all-zero ones. Frames are cached
    /// in model resolution unless `jitter` needs the raw crops.
    pub fn build(
        sources: &[VideoSource],
        preproc: &PreprocSettings,
        keep_empty: f64,
        jitter: JitterRange,
        cull_seed: u64,
    ) -> Result<Dataset> {
        if sources.is_empty() {
            return Err(Error::Config("no training videos given".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cull_seed);
        let mut videos = Vec::new();
        let mut samples = Vec::new();
        let mut total = 0;
        let mut norm_frames: Vec<ModelImage> = Vec::new();
        for (vi, src) in sources.iter().enumerate() {
            let manifest = read_manifest(&src.manifest)?;
            let midi = fs::read(&src.midi).map_err(|e| Error::io(&src.midi, e))?;
            let notes = parse_smf(&midi)?;
            let detected = select_box(&DetectionSet::read(&src.detections)?)?;
            let (keyboard, _) = resolve_box(&detected, manifest.width, manifest.height)?;

            let map = onsets_to_frames(&notes, manifest.fps);
            let n = window_count(manifest.frame_count, WINDOW_LEN, 1);
            total += n;
            let labelled: Vec<(usize, _)> = (0..n).map(|s| (vi, window_label(&map, s))).collect();
            for (video, label) in cull_empty(labelled, &mut rng, keep_empty) {
                samples.push(Sample {
                    video,
                    start: label.start,
                    target: label.values,
                });
            }

            let frames = if jitter.is_zero() {
                let imgs = par::map_range(manifest.frame_count, |i| {
                    let frame = read_frame(&manifest, i)?;
                    crop_and_prepare(&frame, &keyboard, preproc)
                });
                Some(imgs.into_iter().collect::<Result<Vec<_>>>()?)
            } else {
                let stride = manifest.frame_count.div_ceil(NORM_SAMPLE_FRAMES).max(1);
                let imgs = par::map_range(manifest.frame_count.div_ceil(stride), |k| {
                    crop_and_prepare(&read_frame(&manifest, k * stride)?, &keyboard, preproc)
                });
                norm_frames.extend(imgs.into_iter().collect::<Result<Vec<_>>>()?);
                None
            };
            log::info!(
                "{}: {} frames, {} windows, {} notes",
                src.manifest.display(),
                manifest.frame_count,
                n,
                notes.len()
            );
            videos.push(Video {
                manifest,
                keyboard,
                frames,
            });
        }
        let cached = videos.iter().flat_map(|v: &Video| v.frames.iter().flatten());
        let input = InputNorm::fit(cached.chain(&norm_frames).map(|f| f.pixels.data.as_slice()))
            .unwrap_or_default();
        Ok(Dataset {
            videos,
            samples,
            preproc: *preproc,
            total_windows: total,
            input,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positive_windows(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.target.iter().any(|&v| v > 0.0))
            .count()
    }

    /// Model input for sample `i`, with jitter and noise drawn from `rng_seed`.
    fn clip(&self, i: usize, jitter: JitterRange, noise: f64, rng_seed: u64) -> Result<Vec<f32>> {
        let s = &self.samples[i];
        let v = &self.videos[s.video];
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let frames: Vec<ModelImage> = match &v.frames {
            Some(cached) => cached[s.start..s.start + WINDOW_LEN].to_vec(),
            None => {
                // one box per window so the whole clip sees the same crop
                let b = jitter_box(&v.keyboard, &mut rng, jitter, v.manifest.width, v.manifest.height);
                (s.start..s.start + WINDOW_LEN)
                    .map(|f| crop_and_prepare(&read_frame(&v.manifest, f)?, &b, &self.preproc))
                    .collect::<Result<_>>()?
            }
        };
        let frames: Vec<ModelImage> = if noise > 0.0 {
            frames.iter().map(|f| add_noise(f, &mut rng, noise)).collect()
        } else {
            frames
        };
        Ok(assemble_clip(&frames))
    }
}

/// Where and how often to write checkpoints during training.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
    pub every: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub final_loss: f32,
    /// Mean loss over the last 5% of steps.
    pub tail_loss: f64,
    pub seconds: f64,
}

/// Run `cfg.steps` AdamW steps over shuffled epochs of `data`, writing one
/// `step,lr,loss` CSV row per step to `log`.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    log: &mut dyn Write,
    checkpoints: Option<&CheckpointPlan>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty after culling".into()));
    }
    let started = Instant::now();
    let mut params: ModelParams<f32> = init_params(&cfg.model, sub_seed(cfg.seed, "init"))?;
    if data.input.mean.len() == cfg.model.frame_len() {
        params.input = data.input.clone();
    }
    let mut state = AdamWState::new(params.len());
    let mut order_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "data"));
    let aug_seed = sub_seed(cfg.seed, "jitter");
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let io = |e| Error::io(Path::new("<training log>"), e);
    writeln!(log, "step,lr,loss").map_err(io)?;
    let tail_from = cfg.steps - (cfg.steps / 20).max(1);
    let (mut tail_sum, mut tail_n) = (0.0, 0usize);
    let mut last = f32::NAN;
    for step in 0..cfg.steps {
        let mut picks = Vec::with_capacity(cfg.batch);
        while picks.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let clips: Vec<Vec<f32>> = par::map_slice(&picks, |&i| {
            let seed = aug_seed ^ step.wrapping_mul(0x9e37_79b9) ^ (i as u64).rotate_left(32);
            data.clip(i, cfg.jitter, cfg.noise, seed)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let targets: Vec<&[f32]> = picks.iter().map(|&i| &data.samples[i].target[..]).collect();

        let lr = lr_schedule(step, cfg.steps, cfg.warmup_frac, cfg.base_lr)?;
        let (loss, g) = grad(&params, &clips, &targets, cfg.class_weight)?;
        adamw_step(&mut params, &g, &mut state, lr, &cfg.optimizer)?;
        writeln!(log, "{step},{lr:.6e},{loss:.6}").map_err(io)?;
        last = loss;
        if step >= tail_from {
            tail_sum += loss as f64;
            tail_n += 1;
        }
        if let Some(plan) = checkpoints {
            if plan.every > 0 && (step + 1) % plan.every == 0 && step + 1 < cfg.steps {
                save_checkpoint(&plan.dir.join(format!("step_{:06}.ckpt", step + 1)), &params)?;
            }
        }
        if (step + 1) % 500 == 0 {
            log::info!("step {} lr {lr:.3e} loss {loss:.5}", step + 1);
        }
    }
    if let Some(plan) = checkpoints {
        save_checkpoint(&plan.dir.join("final.ckpt"), &params)?;
    }
    Ok(TrainOutcome {
        params,
        final_loss: last,
        tail_loss: tail_sum / tail_n.max(1) as f64,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{ColorMode, FitMode};
    use crate::synthkbd::{generate, SynthSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                frames: 16,
                resolution: 16,
                tubelet: 2,
                patch: 8,
                dim: 16,
                layers: 1,
                heads: 2,
                channels: 1,
                mlp_ratio: 2,
            },
            preproc: PreprocSettings {
                fit: FitMode::SplitStackStretch,
                resolution: 16,
                color: ColorMode::Grayscale,
            },
            batch: 4,
            base_lr: 1e-3,
            steps: 30,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sub_seeds_differ_by_name_and_seed() {
        assert_ne!(sub_seed(1, "data"), sub_seed(1, "init"));
        assert_ne!(sub_seed(1, "data"), sub_seed(2, "data"));
        assert_eq!(sub_seed(9, "cull"), sub_seed(9, "cull"));
    }

    #[test]
    fn config_validation() {
        assert!(tiny_cfg().validate().is_ok());
        assert!(TrainConfig { class_weight: 0.5, ..tiny_cfg() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..tiny_cfg() }.validate().is_err());
        let mut c = tiny_cfg();
        c.preproc.resolution = 32;
        assert!(c.validate().is_err());
    }

    #[test]
    fn culling_keeps_all_positive_windows_and_training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { seed: 4, duration: 4.0, note_rate: 3.0, ..SynthSpec::default() };
        let out = generate(&spec, dir.path()).unwrap();
        let src = [VideoSource::from_dir(dir.path())];
        let cfg = tiny_cfg();
        let data = Dataset::build(&src, &cfg.preproc, 0.05, cfg.jitter, 1).unwrap();
        assert_eq!(data.total_windows, 120 - 15);
        let map = onsets_to_frames(&out.notes, 30.0);
        let positives = (0..data.total_windows).filter(|&s| !window_label(&map, s).is_empty()).count();
        assert_eq!(data.positive_windows(), positives);

        let mut log_a = Vec::new();
        let mut log_b = Vec::new();
        let a = train(&cfg, &data, &mut log_a, None).unwrap();
        let b = train(&cfg, &data, &mut log_b, None).unwrap();
        assert_eq!(a.params.data, b.params.data);
        assert_eq!(log_a, log_b);
        let text = String::from_utf8(log_a).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(text.starts_with("step,lr,loss\n0,0.000000e0,"));
    }

    #[test]
    fn jittered_and_noisy_training_runs() {
        let dir = tempfile::tempdir().unwrap();
        generate(&SynthSpec { duration: 2.0, note_rate: 4.0, ..SynthSpec::default() }, dir.path()).unwrap();
        let cfg = TrainConfig {
            jitter: JitterRange::symmetric(3),
            noise: 0.05,
            steps: 3,
            ..tiny_cfg()
        };
        let data = Dataset::build(&[VideoSource::from_dir(dir.path())], &cfg.preproc, 1.0, cfg.jitter, 0).unwrap();
        let ckpt = tempfile::tempdir().unwrap();
        let plan = CheckpointPlan { dir: ckpt.path().to_path_buf(), every: 2 };
        let out = train(&cfg, &data, &mut std::io::sink(), Some(&plan)).unwrap();
        assert!(out.final_loss.is_finite());
        assert!(ckpt.path().join("step_000002.ckpt").exists());
        assert!(ckpt.path().join("final.ckpt").exists());
    }
}
