//! Deterministic synthetic top-down keyboard videos with ground truth.
//!
//! A keyboard of 52 white and 36 black key rectangles is drawn on a dark
//! background. Each scheduled note darkens its key for a fixed number of
//! frames starting at the onset's nearest frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::image::Frame;
use crate::keyboard_region::{BoundingBox, DetectionSet};
use crate::par;
use crate::targets::{nearest_frame, write_smf, NoteEvent, HIGHEST_PITCH, LOWEST_PITCH, NUM_KEYS};
use crate::video_io::{format_frame_name, write_ppm, VideoManifest, DEFAULT_FPS, WINDOW_LEN};

pub const WHITE_KEYS: usize = 52;
pub const FRAME_PATTERN: &str = "frame_%06d.ppm";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MIDI_FILE: &str = "notes.mid";
pub const DETECTIONS_FILE: &str = "detections.txt";

const BACKGROUND: u8 = 30;
const SEPARATOR: u8 = 70;
const WHITE: u8 = 235;
const BLACK: u8 = 90;
/// Onsets are placed on the MIDI tick grid (1/960 s at the writer's tempo)
/// so the written file reproduces them exactly.
const TICKS_PER_SEC: f64 = 960.0;
/// Frames rendered and written per parallel batch.
const RENDER_CHUNK: usize = 64;

/// Which end of the frame holds the lowest key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PitchOrder {
    #[default]
    LowLeft,
    LowRight,
}

impl std::str::FromStr for PitchOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low-left" => Ok(PitchOrder::LowLeft),
            "low-right" => Ok(PitchOrder::LowRight),
            _ => Err(Error::Config(format!("unknown pitch order {s:?} (low-left|low-right)"))),
        }
    }
}

impl std::fmt::Display for PitchOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PitchOrder::LowLeft => "low-left",
            PitchOrder::LowRight => "low-right",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub duration: f64,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    /// Keyboard rectangle inside the frame, `[x0, x1) × [y0, y1)`.
    pub keyboard: (usize, usize, usize, usize),
    pub pitch_order: PitchOrder,
    /// Mean onsets per second.
    pub note_rate: f64,
    /// Inclusive MIDI pitch range notes are drawn from.
    pub pitches: (u8, u8),
    /// Fraction of a key's brightness removed while pressed.
    pub intensity: f64,
    pub press_frames: usize,
    /// Standard deviation of per-pixel Gaussian noise, in 8-bit levels.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            duration: 120.0,
            fps: DEFAULT_FPS,
            width: 224,
            height: 48,
            keyboard: (8, 8, 216, 40),
            pitch_order: PitchOrder::LowLeft,
            note_rate: 0.8,
            pitches: (LOWEST_PITCH, HIGHEST_PITCH),
            intensity: 0.6,
            press_frames: 6,
            noise: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(Error::NonPositiveFps);
        }
        if !(self.duration > 0.0) || self.frame_count() < WINDOW_LEN {
            return bad(format!(
                "duration {} s at {} fps gives fewer than {WINDOW_LEN} frames",
                self.duration, self.fps
            ));
        }
        if !(self.note_rate > 0.0) || !self.note_rate.is_finite() {
            return bad(format!("note rate must be positive, got {}", self.note_rate));
        }
        let (lo, hi) = self.pitches;
        if lo < LOWEST_PITCH || hi > HIGHEST_PITCH || lo > hi {
            return bad(format!(
                "pitch range {lo}..={hi} must lie within {LOWEST_PITCH}..={HIGHEST_PITCH}"
            ));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad(format!("intensity must lie in [0, 1], got {}", self.intensity));
        }
        if self.press_frames == 0 {
            return bad("press duration must be at least one frame".into());
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        let (x0, y0, x1, y1) = self.keyboard;
        if x1 > self.width || y1 > self.height || x0 >= x1 || y0 >= y1 {
            return bad(format!(
                "keyboard ({x0},{y0})-({x1},{y1}) does not fit a {}x{} frame",
                self.width, self.height
            ));
        }
        if x1 - x0 < 2 * WHITE_KEYS || y1 - y0 < 4 {
            return bad(format!("keyboard {}x{} too small for 88 keys", x1 - x0, y1 - y0));
        }
        Ok(())
    }

    pub fn keyboard_box(&self) -> BoundingBox {
        let (x0, y0, x1, y1) = self.keyboard;
        BoundingBox {
            x0: x0 as i64,
            y0: y0 as i64,
            x1: x1 as i64,
            y1: y1 as i64,
            confidence: 1.0,
        }
    }
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

pub fn is_black(pitch: u8) -> bool {
    matches!(pitch % 12, 1 | 3 | 6 | 8 | 10)
}

/// Key rectangles in key order. White rectangles span the full keyboard
/// height; the black keys drawn over their upper part are excluded at render
/// time.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyboardGeometry {
    pub keys: Vec<Rect>,
}

impl KeyboardGeometry {
    pub fn new(spec: &SynthSpec) -> Self {
        let (x0, y0, x1, y1) = spec.keyboard;
        let kw = (x1 - x0) as f64;
        let edge = |i: usize| x0 + (i as f64 * kw / WHITE_KEYS as f64).round() as usize;
        let white_w = kw / WHITE_KEYS as f64;
        let black_w = (white_w * 0.6).round().max(1.0) as usize;
        let black_h = ((y1 - y0) as f64 * 0.62).round() as usize;

        let mut keys = Vec::with_capacity(NUM_KEYS);
        let mut white_idx = 0usize;
        for k in 0..NUM_KEYS {
            let pitch = LOWEST_PITCH + k as u8;
            let r = if is_black(pitch) {
                // centred on the boundary left of the next white key
                let c = edge(white_idx);
                let left = c - black_w / 2;
                Rect { x0: left, y0, x1: left + black_w, y1: y0 + black_h }
            } else {
                let r = Rect {
                    x0: edge(white_idx),
                    y0,
                    // the last column is the separator line
                    x1: edge(white_idx + 1) - 1,
                    y1,
                };
                white_idx += 1;
                r
            };
            keys.push(r);
        }
        if spec.pitch_order == PitchOrder::LowRight {
            for r in &mut keys {
                let (a, b) = (x0 + x1 - r.x1, x0 + x1 - r.x0);
                r.x0 = a;
                r.x1 = b;
            }
        }
        KeyboardGeometry { keys }
    }

    /// The key whose visible surface covers `(x, y)`, if any. Black keys sit
    /// on top.
    pub fn key_at(&self, x: usize, y: usize) -> Option<usize> {
        let black = (0..NUM_KEYS)
            .filter(|&k| is_black(LOWEST_PITCH + k as u8))
            .find(|&k| self.keys[k].contains(x, y));
        black.or_else(|| (0..NUM_KEYS).find(|&k| self.keys[k].contains(x, y)))
    }
}

/// Seeded Poisson onsets with uniform pitch. A key is not struck again until
/// two frames after its previous press has ended, so presses never merge.
pub fn schedule_notes(spec: &SynthSpec) -> Vec<NoteEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gap = Exp::new(spec.note_rate).expect("validated rate");
    let frames = spec.frame_count();
    let min_gap = spec.press_frames + 2;
    let mut free_from = [0usize; NUM_KEYS];
    let (first_key, last_key) = (
        (spec.pitches.0 - LOWEST_PITCH) as usize,
        (spec.pitches.1 - LOWEST_PITCH) as usize,
    );
    let mut notes = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        let onset = (t * TICKS_PER_SEC).round() / TICKS_PER_SEC;
        let frame = nearest_frame(onset, spec.fps);
        if frame >= frames {
            break;
        }
        let key = rng.random_range(first_key..last_key + 1);
        if frame < free_from[key] {
            continue;
        }
        free_from[key] = frame + min_gap;
        notes.push(NoteEvent::from_key(onset, key));
    }
    notes
}

/// Per-frame sets of pressed keys.
pub fn pressed_keys(spec: &SynthSpec, notes: &[NoteEvent]) -> Vec<Vec<usize>> {
    let mut pressed = vec![Vec::new(); spec.frame_count()];
    for n in notes {
        let start = nearest_frame(n.onset, spec.fps);
        for slot in pressed.iter_mut().skip(start).take(spec.press_frames) {
            slot.push(n.key());
        }
    }
    pressed
}

fn fill(frame: &mut Frame, r: &Rect, v: u8) {
    for y in r.y0..r.y1 {
        let row = frame.idx(r.x0, y, 0);
        frame.data[row..row + (r.x1 - r.x0) * 3].fill(v);
    }
}

fn darken(base: u8, intensity: f64) -> u8 {
    (base as f64 * (1.0 - intensity)).round() as u8
}

/// Draw one frame with the given keys pressed.
pub fn render_frame(spec: &SynthSpec, geo: &KeyboardGeometry, pressed: &[usize]) -> Frame {
    let mut f = Frame::filled(spec.width, spec.height, 3, BACKGROUND);
    let (x0, y0, x1, y1) = spec.keyboard;
    fill(&mut f, &Rect { x0, y0, x1, y1 }, SEPARATOR);
    let is_pressed = |k: usize| pressed.contains(&k);
    for pass_black in [false, true] {
        for (k, r) in geo.keys.iter().enumerate() {
            if is_black(LOWEST_PITCH + k as u8) != pass_black {
                continue;
            }
            let base = if pass_black { BLACK } else { WHITE };
            let v = if is_pressed(k) { darken(base, spec.intensity) } else { base };
            fill(&mut f, r, v);
        }
    }
    f
}

fn add_frame_noise(f: &mut Frame, seed: u64, index: usize, sigma: f64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500_0000 ^ index as u64);
    let n = Normal::new(0.0, sigma).expect("validated sigma");
    for v in f.data.iter_mut() {
        *v = (*v as f64 + n.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest: VideoManifest,
    pub manifest_path: PathBuf,
    pub notes: Vec<NoteEvent>,
    pub smf: Vec<u8>,
    pub detections: DetectionSet,
}

/// Render the video and write frames, manifest, MIDI and detections to
/// `out_dir`.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    generate_notes(spec, schedule_notes(spec), out_dir)
}

/// Like [`generate`] with a caller-chosen note list instead of the seeded
/// schedule.
pub fn generate_notes(spec: &SynthSpec, mut notes: Vec<NoteEvent>, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    crate::targets::sort_notes(&mut notes);
    let frame_dir = out_dir.join("frames");
    fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;

    let pressed = pressed_keys(spec, &notes);
    let geo = KeyboardGeometry::new(spec);
    let count = spec.frame_count();
    for start in (0..count).step_by(RENDER_CHUNK) {
        let end = (start + RENDER_CHUNK).min(count);
        let written = par::map_range(end - start, |i| -> Result<()> {
            let idx = start + i;
            let mut f = render_frame(spec, &geo, &pressed[idx]);
            add_frame_noise(&mut f, spec.seed, idx, spec.noise);
            write_ppm(&frame_dir.join(format_frame_name(FRAME_PATTERN, idx)?), &f)
        });
        written.into_iter().collect::<Result<Vec<()>>>()?;
    }

    let manifest = VideoManifest {
        frame_dir,
        frame_pattern: FRAME_PATTERN.into(),
        frame_count: count,
        fps: spec.fps,
        width: spec.width,
        height: spec.height,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.to_text("frames")).map_err(|e| Error::io(&manifest_path, e))?;

    let smf = write_smf(&notes)?;
    let midi_path = out_dir.join(MIDI_FILE);
    fs::write(&midi_path, &smf).map_err(|e| Error::io(&midi_path, e))?;

    let detections = DetectionSet {
        frames: (0..count).map(|_| vec![spec.keyboard_box()]).collect(),
    };
    let det_path = out_dir.join(DETECTIONS_FILE);
    fs::write(&det_path, detections.to_text()).map_err(|e| Error::io(&det_path, e))?;

    Ok(SynthOutput {
        manifest,
        manifest_path,
        notes,
        smf,
        detections,
    })
}
