//! One static keyboard box per video: pick the most confident detection among
//! the first frames, then crop every frame to it.

use std::fmt;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::image::Image;

/// Frames scanned at the start of a video when choosing the keyboard box.
pub const DEFAULT_SCAN_FRAMES: usize = 30;
/// Minimum fraction of an out-of-bounds box that must lie inside the frame
/// for it to be clamped instead of rejected.
pub const MIN_CLAMP_OVERLAP: f64 = 0.9;

/// Pixel rectangle `[x0, x1) × [y0, y1)` with a detector confidence.
///
/// Coordinates are signed so that detector output or jitter that strays past
/// the frame edge can be represented and clamped later.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64, confidence: f64) -> Result<Self> {
        let b = BoundingBox {
            x0,
            y0,
            x1,
            y1,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidBox(format!("{self} is empty or inverted")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidBox(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    /// Intersection with `[0, width) × [0, height)`, if non-empty.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let b = BoundingBox {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(width as i64),
            y1: self.y1.min(height as i64),
            confidence: self.confidence,
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 <= width as i64 && self.y1 <= height as i64
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{})-({},{}) @{:.3}",
            self.x0, self.y0, self.x1, self.y1, self.confidence
        )
    }
}

/// Detector candidates for the first frames of a video, indexed by frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet {
    pub frames: Vec<Vec<BoundingBox>>,
}

impl DetectionSet {
    /// Parse `frame_index x0 y0 x1 y1 confidence` lines. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = DetectionSet::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |what: &str| Error::Detections(format!("line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(err("expected 6 fields"));
            }
            let frame: usize = fields[0].parse().map_err(|_| err("bad frame index"))?;
            let mut c = [0i64; 4];
            for (slot, raw) in c.iter_mut().zip(&fields[1..5]) {
                // detectors often emit fractional pixels; round to the grid
                let v: f64 = raw.parse().map_err(|_| err("bad coordinate"))?;
                *slot = v.round() as i64;
            }
            let conf: f64 = fields[5].parse().map_err(|_| err("bad confidence"))?;
            let b = BoundingBox::new(c[0], c[1], c[2], c[3], conf)
                .map_err(|e| err(&e.to_string()))?;
            if set.frames.len() <= frame {
                set.frames.resize(frame + 1, Vec::new());
            }
            set.frames[frame].push(b);
        }
        Ok(set)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, boxes) in self.frames.iter().enumerate() {
            for b in boxes {
                s.push_str(&format!(
                    "{i} {} {} {} {} {}\n",
                    b.x0, b.y0, b.x1, b.y1, b.confidence
                ));
            }
        }
        s
    }

    pub fn candidate_count(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }
}

/// Most confident candidate among the first `scan_frames` frames. Ties go to
/// the earliest frame, then the smallest `x0`.
pub fn select_box_within(detections: &DetectionSet, scan_frames: usize) -> Result<BoundingBox> {
    let mut best: Option<(usize, BoundingBox)> = None;
    for (frame, boxes) in detections.frames.iter().enumerate().take(scan_frames) {
        for b in boxes {
            let better = match &best {
                None => true,
                Some((bf, bb)) => {
                    b.confidence > bb.confidence
                        || (b.confidence == bb.confidence && frame == *bf && b.x0 < bb.x0)
                }
            };
            if better {
                best = Some((frame, *b));
            }
        }
    }
    best.map(|(_, b)| b).ok_or(Error::NoKeyboard)
}

pub fn select_box(detections: &DetectionSet) -> Result<BoundingBox> {
    select_box_within(detections, DEFAULT_SCAN_FRAMES)
}

/// A crop plus whether the box had to be clamped to the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop<T> {
    pub image: Image<T>,
    pub clamped: bool,
}

/// Resolve `b` against a `width × height` frame: identity when inside, clamped
/// when at least 90% of the box overlaps the frame, an error otherwise.
pub fn resolve_box(b: &BoundingBox, width: usize, height: usize) -> Result<(BoundingBox, bool)> {
    b.validate()?;
    if b.within(width, height) {
        return Ok((*b, false));
    }
    let clamped = b.clamp_to(width, height);
    let overlap = clamped.map_or(0, |c| c.area()) as f64 / b.area() as f64;
    match clamped {
        Some(c) if overlap >= MIN_CLAMP_OVERLAP => {
            warn!(
                "box {b} exceeds the {width}x{height} frame; clamped to {c} ({:.1}% overlap)",
                overlap * 100.0
            );
            Ok((c, true))
        }
        _ => Err(Error::InvalidBox(format!(
            "{b} lies mostly outside the {width}x{height} frame ({:.1}% overlap)",
            overlap * 100.0
        ))),
    }
}

/// Copy the pixels under `b`; output is `(y1−y0) × (x1−x0)` of the resolved box.
pub fn crop_frame<T: Copy + Default>(frame: &Image<T>, b: &BoundingBox) -> Result<Crop<T>> {
    let (r, clamped) = resolve_box(b, frame.width, frame.height)?;
    let image = frame.sub_image(
        r.x0 as usize,
        r.y0 as usize,
        r.width() as usize,
        r.height() as usize,
    );
    Ok(Crop { image, clamped })
}
