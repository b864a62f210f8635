//! The `pianovt` command line: `synth`, `train`, `transcribe`, `eval`,
//! `gradcheck` and `preview`.
//!
//! Tunable values resolve as flag, then `--config` file entry, then built-in
//! default. Config files hold `key = value` lines whose keys are the long
//! flag names. Failures print one line, `pianovt: error[<code>]: <message>`,
//! and exit nonzero.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, tiny_config, DEFAULT_STEP};
use crate::image::Image;
use crate::keyboard_region::{crop_frame, select_box, DetectionSet};
use crate::metrics::{report_csv, score_file, DEFAULT_TOLERANCE};
use crate::model::{load_checkpoint, AdamWConfig, ModelConfig, ModelParams};
use crate::preprocess::{
    fit_square, to_grayscale, ColorMode, FitMode, JitterRange, PreprocSettings, DEFAULT_ASPECT_FACTOR,
    DEFAULT_RESOLUTION,
};
use crate::synthkbd::{generate, PitchOrder, SynthSpec};
use crate::targets::{parse_smf, write_smf, KEEP_EMPTY_FRACTION};
use crate::training::{sub_seed, train, CheckpointPlan, Dataset, TrainConfig, VideoSource};
use crate::transcribe::{postprocess, sliding_predict, PostProcess, SlidingOptions};
use crate::video_io::{read_frame, read_manifest, write_ppm};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Largest relative error the `gradcheck` subcommand accepts by default.
pub const GRADCHECK_LIMIT: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "pianovt", version, about = "Onset-only piano transcription from top-down keyboard video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic keyboard video with ground-truth MIDI and detections.
    Synth(SynthArgs),
    /// Train a model on labelled videos.
    Train(TrainArgs),
    /// Turn a video into an onset-only MIDI file.
    Transcribe(TranscribeArgs),
    /// Score estimated MIDI files against references.
    Eval(EvalArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the model-input image of one frame for each fit mode.
    Preview(PreviewArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    /// Mean onsets per second.
    #[arg(long)]
    rate: Option<f64>,
    /// Inclusive MIDI pitch range LO,HI notes are drawn from.
    #[arg(long)]
    pitches: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Keyboard rectangle as X0,Y0,X1,Y1.
    #[arg(long)]
    keyboard: Option<String>,
    /// Fraction of brightness removed from a pressed key.
    #[arg(long)]
    intensity: Option<f64>,
    /// Frames a key stays dark after its onset.
    #[arg(long)]
    press_frames: Option<usize>,
    /// Per-pixel Gaussian noise, in 8-bit levels.
    #[arg(long)]
    noise: Option<f64>,
    /// low-left or low-right.
    #[arg(long)]
    pitch_order: Option<PitchOrder>,
}

#[derive(Args, Debug)]
struct PreprocArgs {
    /// stretch, aspect[:K], split or split-stretch.
    #[arg(long)]
    fit: Option<FitMode>,
    /// Single luma channel.
    #[arg(long, conflicts_with = "normalize_rgb")]
    grayscale: bool,
    /// RGB standardized with ImageNet statistics.
    #[arg(long)]
    normalize_rgb: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory with manifest.txt, notes.mid and detections.txt; repeatable.
    #[arg(long = "video", required = true)]
    videos: Vec<PathBuf>,
    /// Output directory for metrics.csv, checkpoints and train.cfg.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    preproc: PreprocArgs,
    /// desk or base.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    tubelet: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    mlp_ratio: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Warmup length as a fraction of all steps.
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Weight of the positive loss term.
    #[arg(long)]
    class_weight: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Fraction of all-zero windows kept.
    #[arg(long)]
    keep_empty: Option<f64>,
    /// Per-side box jitter LO,HI in pixels.
    #[arg(long, allow_hyphen_values = true)]
    jitter: Option<JitterRange>,
    /// Gaussian input noise in model-input units.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Steps between intermediate checkpoints; 0 keeps only the final one.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args, Debug)]
struct TranscribeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output MIDI file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    preproc: PreprocArgs,
    /// Omit the final sliding-window position.
    #[arg(long)]
    drop_last_window: bool,
    /// Also write the raw activation matrix as CSV.
    #[arg(long)]
    activations: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    threshold: Option<f32>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reference MIDI; repeatable, paired with --est in order.
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    /// Estimated MIDI; repeatable.
    #[arg(long = "est", required = true)]
    ests: Vec<PathBuf>,
    /// Onset tolerance in seconds.
    #[arg(long)]
    tol: Option<f64>,
    /// Also write the report to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 3.0)]
    class_weight: f64,
    /// Central-difference half step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = GRADCHECK_LIMIT)]
    limit: f64,
}

#[derive(Args, Debug)]
struct PreviewArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Only this mode; all four otherwise.
    #[arg(long)]
    fit: Option<FitMode>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    grayscale: bool,
}

/// Every key a config file may contain.
const CONFIG_KEYS: &[&str] = &[
    "seed",
    "duration",
    "fps",
    "rate",
    "pitches",
    "width",
    "height",
    "keyboard",
    "intensity",
    "press-frames",
    "pitch-order",
    "fit",
    "color",
    "preset",
    "resolution",
    "tubelet",
    "patch",
    "dim",
    "layers",
    "heads",
    "mlp-ratio",
    "batch",
    "lr",
    "warmup",
    "steps",
    "class-weight",
    "weight-decay",
    "keep-empty",
    "jitter",
    "noise",
    "checkpoint-every",
    "sigma",
    "threshold",
];

/// Values from an optional config file, consulted after flags.
struct Settings {
    file: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let bad = |m: &str| Error::Config(format!("{}:{}: {m}", p.display(), n + 1));
                let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
                let key = k.trim().replace('_', "-");
                if !CONFIG_KEYS.contains(&key.as_str()) {
                    return Err(bad(&format!("unknown key {key:?}")));
                }
                if file.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(bad(&format!("duplicate key {key:?}")));
                }
            }
        }
        Ok(Settings {
            file,
            source: path.map(Path::to_path_buf),
        })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                let src = self.source.as_deref().unwrap_or(Path::new("config"));
                Error::Config(format!("{}: {key}: {e}", src.display()))
            }),
        }
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file_value(key),
        }
    }

    fn color(&self, p: &PreprocArgs) -> Result<Option<ColorMode>> {
        if p.grayscale {
            return Ok(Some(ColorMode::Grayscale));
        }
        if p.normalize_rgb {
            return Ok(Some(ColorMode::RgbNormalized));
        }
        self.file_value("color")
    }
}

/// The one-line error report printed on failure.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("pianovt: error[{}]: {msg}", e.code())
}

/// Parse `argv` (program name first), run the subcommand, and return the
/// process exit status.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line(&Error::Usage(first.to_string())));
            return EXIT_USAGE;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Transcribe(a) => run_transcribe(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Preview(a) => run_preview(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            if matches!(e, Error::Usage(_)) {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn parse_rect(s: &str) -> Result<(usize, usize, usize, usize)> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("keyboard must be X0,Y0,X1,Y1, got {s:?}")))?;
    match v[..] {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::Usage(format!("keyboard must be X0,Y0,X1,Y1, got {s:?}"))),
    }
}

fn parse_pitches(s: &str) -> Result<(u8, u8)> {
    let bad = || Error::Usage(format!("pitches must be LO,HI MIDI numbers, got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let cfg = Settings::load(a.config.as_deref())?;
    let d = SynthSpec::default();
    let keyboard = match cfg.pick_opt(a.keyboard, "keyboard")? {
        Some(s) => parse_rect(&s)?,
        None => d.keyboard,
    };
    let pitches = match cfg.pick_opt(a.pitches, "pitches")? {
        Some(s) => parse_pitches(&s)?,
        None => d.pitches,
    };
    let spec = SynthSpec {
        seed: cfg.pick(a.seed, "seed", d.seed)?,
        duration: cfg.pick(a.duration, "duration", d.duration)?,
        fps: cfg.pick(a.fps, "fps", d.fps)?,
        width: cfg.pick(a.width, "width", d.width)?,
        height: cfg.pick(a.height, "height", d.height)?,
        keyboard,
        pitch_order: cfg.pick(a.pitch_order, "pitch-order", d.pitch_order)?,
        note_rate: cfg.pick(a.rate, "rate", d.note_rate)?,
        pitches,
        intensity: cfg.pick(a.intensity, "intensity", d.intensity)?,
        press_frames: cfg.pick(a.press_frames, "press-frames", d.press_frames)?,
        noise: cfg.pick(a.noise, "noise", d.noise)?,
    };
    let out = generate(&spec, &a.out)?;
    println!(
        "frames={} notes={} manifest={}",
        out.manifest.frame_count,
        out.notes.len(),
        out.manifest_path.display()
    );
    Ok(())
}

fn model_config(a: &TrainArgs, cfg: &Settings, channels: usize) -> Result<ModelConfig> {
    let preset: String = cfg.pick(a.preset.clone(), "preset", "desk".to_string())?;
    let base = match preset.as_str() {
        "desk" => ModelConfig::desk(),
        "base" => ModelConfig::default(),
        other => return Err(Error::Usage(format!("unknown preset {other:?} (desk|base)"))),
    };
    let m = ModelConfig {
        frames: base.frames,
        resolution: cfg.pick(a.resolution, "resolution", base.resolution)?,
        tubelet: cfg.pick(a.tubelet, "tubelet", base.tubelet)?,
        patch: cfg.pick(a.patch, "patch", base.patch)?,
        dim: cfg.pick(a.dim, "dim", base.dim)?,
        layers: cfg.pick(a.layers, "layers", base.layers)?,
        heads: cfg.pick(a.heads, "heads", base.heads)?,
        channels,
        mlp_ratio: cfg.pick(a.mlp_ratio, "mlp-ratio", base.mlp_ratio)?,
    };
    m.validate()?;
    Ok(m)
}

/// The resolved settings, in config-file syntax so a later `transcribe`
/// can reuse them.
fn describe_train(c: &TrainConfig) -> String {
    let m = &c.model;
    format!(
        "# resolved training settings\n\
         fit = {}\ncolor = {}\nresolution = {}\ntubelet = {}\npatch = {}\ndim = {}\n\
         layers = {}\nheads = {}\nmlp-ratio = {}\nbatch = {}\nlr = {}\nwarmup = {}\n\
         steps = {}\nclass-weight = {}\nweight-decay = {}\nkeep-empty = {}\njitter = {}\n\
         noise = {}\nseed = {}\n",
        c.preproc.fit,
        c.preproc.color,
        m.resolution,
        m.tubelet,
        m.patch,
        m.dim,
        m.layers,
        m.heads,
        m.mlp_ratio,
        c.batch,
        c.base_lr,
        c.warmup_frac,
        c.steps,
        c.class_weight,
        c.optimizer.weight_decay,
        c.keep_empty,
        c.jitter,
        c.noise,
        c.seed
    )
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = Settings::load(a.config.as_deref())?;
    let color = cfg.color(&a.preproc)?.unwrap_or_default();
    let model = model_config(&a, &cfg, color.channels())?;
    let preproc = PreprocSettings {
        fit: cfg.pick(a.preproc.fit, "fit", FitMode::default())?,
        resolution: model.resolution,
        color,
    };
    let d = TrainConfig::default();
    let tc = TrainConfig {
        model,
        preproc,
        batch: cfg.pick(a.batch, "batch", d.batch)?,
        base_lr: cfg.pick(a.lr, "lr", d.base_lr)?,
        warmup_frac: cfg.pick(a.warmup, "warmup", d.warmup_frac)?,
        steps: cfg.pick(a.steps, "steps", d.steps)?,
        class_weight: cfg.pick(a.class_weight, "class-weight", d.class_weight)?,
        optimizer: AdamWConfig {
            weight_decay: cfg.pick(a.weight_decay, "weight-decay", d.optimizer.weight_decay)?,
            ..d.optimizer
        },
        keep_empty: cfg.pick(a.keep_empty, "keep-empty", KEEP_EMPTY_FRACTION)?,
        jitter: cfg.pick(a.jitter, "jitter", d.jitter)?,
        noise: cfg.pick(a.noise, "noise", d.noise)?,
        seed: cfg.pick(a.seed, "seed", d.seed)?,
    };
    tc.validate()?;
    let every = cfg.pick(a.checkpoint_every, "checkpoint-every", 0)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let cfg_path = a.out.join("train.cfg");
    fs::write(&cfg_path, describe_train(&tc)).map_err(|e| Error::io(&cfg_path, e))?;
    let sources: Vec<VideoSource> = a.videos.iter().map(|d| VideoSource::from_dir(d)).collect();
    let data = Dataset::build(&sources, &tc.preproc, tc.keep_empty, tc.jitter, sub_seed(tc.seed, "cull"))?;
    log::info!(
        "{} of {} windows kept ({} with onsets)",
        data.len(),
        data.total_windows,
        data.positive_windows()
    );
    let log_path = a.out.join("metrics.csv");
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let plan = CheckpointPlan {
        dir: a.out.clone(),
        every,
    };
    let outcome = train(&tc, &data, &mut log, Some(&plan))?;
    std::io::Write::flush(&mut log).map_err(|e| Error::io(&log_path, e))?;
    println!(
        "steps={} final_loss={:.6} tail_loss={:.6} seconds={:.1} checkpoint={}",
        tc.steps,
        outcome.final_loss,
        outcome.tail_loss,
        outcome.seconds,
        a.out.join("final.ckpt").display()
    );
    Ok(())
}

fn run_transcribe(a: TranscribeArgs) -> Result<()> {
    let cfg = Settings::load(a.config.as_deref())?;
    let params: ModelParams<f32> = load_checkpoint(&a.checkpoint)?;
    let inferred = if params.config.channels == 1 {
        ColorMode::Grayscale
    } else {
        ColorMode::RgbNormalized
    };
    let preproc = PreprocSettings {
        fit: cfg.pick(a.preproc.fit, "fit", FitMode::default())?,
        resolution: params.config.resolution,
        color: cfg.color(&a.preproc)?.unwrap_or(inferred),
    };
    let d = PostProcess::default();
    let pp = PostProcess {
        sigma: cfg.pick(a.sigma, "sigma", d.sigma)?,
        threshold: cfg.pick(a.threshold, "threshold", d.threshold)?,
        ..d
    };
    if !(pp.sigma > 0.0) {
        return Err(Error::Usage(format!("sigma must be positive, got {}", pp.sigma)));
    }
    let manifest = read_manifest(&a.manifest)?;
    let keyboard = select_box(&DetectionSet::read(&a.detections)?)?;
    let opts = SlidingOptions {
        preproc,
        drop_last_window: a.drop_last_window,
    };
    let act = sliding_predict(&manifest, &keyboard, &params, &opts)?;
    if let Some(p) = &a.activations {
        fs::write(p, act.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    let notes = postprocess(&act, &pp);
    fs::write(&a.out, write_smf(&notes)?).map_err(|e| Error::io(&a.out, e))?;
    println!("columns={} notes={} out={}", act.cols, notes.len(), a.out.display());
    Ok(())
}

fn read_notes(path: &Path) -> Result<Vec<crate::targets::NoteEvent>> {
    parse_smf(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn run_eval(a: EvalArgs) -> Result<()> {
    if a.refs.len() != a.ests.len() {
        return Err(Error::Usage(format!(
            "{} --ref files but {} --est files",
            a.refs.len(),
            a.ests.len()
        )));
    }
    let tol = a.tol.unwrap_or(DEFAULT_TOLERANCE);
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(Error::Usage(format!("tolerance must be non-negative, got {tol}")));
    }
    let files = a
        .refs
        .iter()
        .zip(&a.ests)
        .map(|(r, e)| {
            let name = r.file_stem().map_or_else(|| r.display().to_string(), |s| s.to_string_lossy().into());
            score_file(&name, &read_notes(r)?, &read_notes(e)?, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = report_csv(&files)?;
    if let Some(p) = &a.out {
        fs::write(p, &report).map_err(|e| Error::io(p, e))?;
    }
    print!("{report}");
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.batch == 0 || !(a.step > 0.0) || a.class_weight < 1.0 {
        return Err(Error::Usage("batch and step must be positive and class weight at least 1".into()));
    }
    let r = check_gradients(&tiny_config(), a.seed, a.batch, a.class_weight, a.step)?;
    println!(
        "checked={} max_rel_error={:.3e} worst={} analytic={:.6e} numeric={:.6e}",
        r.checked, r.max_rel_error, r.worst_tensor, r.worst_analytic, r.worst_numeric
    );
    if r.max_rel_error < a.limit {
        Ok(())
    } else {
        Err(Error::GradCheck(format!(
            "max relative error {:.3e} in {} exceeds {:.1e}",
            r.max_rel_error, r.worst_tensor, a.limit
        )))
    }
}

/// Unit-range image to 8-bit RGB for viewing.
fn to_rgb8(img: &Image<f32>) -> Image<u8> {
    let mut out = Image::new(img.width, img.height, 3);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = img.pixel(x, y);
            for c in 0..3 {
                let v = px[c.min(img.channels - 1)];
                out.set(x, y, c, (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

fn run_preview(a: PreviewArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let keyboard = select_box(&DetectionSet::read(&a.detections)?)?;
    let crop = crop_frame(&read_frame(&manifest, a.frame)?, &keyboard)?.image.to_unit_f32();
    let crop = if a.grayscale { to_grayscale(&crop) } else { crop };
    let modes = match a.fit {
        Some(m) => vec![m],
        None => vec![
            FitMode::Stretch,
            FitMode::AspectMod(DEFAULT_ASPECT_FACTOR),
            FitMode::SplitStack,
            FitMode::SplitStackStretch,
        ],
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for m in modes {
        let img = fit_square(&crop, m, a.resolution)?;
        let name = format!("preview_{}.ppm", m.to_string().replace(':', "_"));
        let path = a.out.join(name);
        write_ppm(&path, &to_rgb8(&img))?;
        println!("{}", path.display());
    }
    Ok(())
}
