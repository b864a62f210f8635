//! Frame-directory video input: a `key=value` manifest plus one binary PPM per
//! frame, and the sliding 16-frame windows the model consumes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::image::Frame;

/// Default temporal resolution in frames per second.
pub const DEFAULT_FPS: f64 = 30.0;
/// Frames per model input window.
pub const WINDOW_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoManifest {
    /// Directory holding the frames, already resolved against the manifest location.
    pub frame_dir: PathBuf,
    pub frame_pattern: String,
    pub frame_count: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
}

const KEYS: [&str; 6] = [
    "frame_dir",
    "frame_pattern",
    "frame_count",
    "fps",
    "width",
    "height",
];

/// Parse `fps` as either a decimal or a `num/den` rational.
fn parse_fps(raw: &str) -> Result<f64> {
    let v = match raw.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad_value("fps", raw))?;
            let d: f64 = d.trim().parse().map_err(|_| bad_value("fps", raw))?;
            if d == 0.0 {
                return Err(Error::NonPositiveFps);
            }
            n / d
        }
        None => raw.parse().map_err(|_| bad_value("fps", raw))?,
    };
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::NonPositiveFps);
    }
    Ok(v)
}

fn bad_value(key: &str, raw: &str) -> Error {
    Error::Manifest(format!("invalid value for {key}: {raw:?}"))
}

/// Expand a printf-style pattern holding one `%d`, `%Nd` or `%0Nd` directive.
pub fn format_frame_name(pattern: &str, index: usize) -> Result<String> {
    let start = pattern
        .find('%')
        .ok_or_else(|| Error::Manifest(format!("frame_pattern {pattern:?} has no % directive")))?;
    let rest = &pattern[start + 1..];
    let end = rest
        .find('d')
        .ok_or_else(|| Error::Manifest(format!("frame_pattern {pattern:?} needs a %d directive")))?;
    let spec = &rest[..end];
    if !spec.chars().all(|c| c.is_ascii_digit()) {
        return Err(Error::Manifest(format!(
            "unsupported directive in frame_pattern {pattern:?}"
        )));
    }
    let zero = spec.starts_with('0');
    let width: usize = if spec.is_empty() { 0 } else { spec.parse().unwrap_or(0) };
    let num = if zero {
        format!("{index:0width$}")
    } else {
        format!("{index:width$}")
    };
    let tail = &rest[end + 1..];
    if tail.contains('%') {
        return Err(Error::Manifest(format!(
            "frame_pattern {pattern:?} has more than one directive"
        )));
    }
    Ok(format!("{}{}{}", &pattern[..start], num, tail))
}

impl VideoManifest {
    pub fn frame_path(&self, index: usize) -> Result<PathBuf> {
        Ok(self
            .frame_dir
            .join(format_frame_name(&self.frame_pattern, index)?))
    }

    /// Render as manifest text. `frame_dir` is written as given.
    pub fn to_text(&self, frame_dir: &str) -> String {
        format!(
            "frame_dir={frame_dir}\nframe_pattern={}\nframe_count={}\nfps={}\nwidth={}\nheight={}\n",
            self.frame_pattern, self.frame_count, self.fps, self.width, self.height
        )
    }
}

/// Read and validate a manifest. Relative `frame_dir` values resolve against
/// the directory containing the manifest.
pub fn read_manifest(path: &Path) -> Result<VideoManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values: [Option<String>; 6] = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Manifest(format!("line {}: expected key=value", lineno + 1))
        })?;
        let k = k.trim();
        let slot = KEYS
            .iter()
            .position(|&known| known == k)
            .ok_or_else(|| Error::Manifest(format!("unknown key {k:?}")))?;
        if values[slot].is_some() {
            return Err(Error::Manifest(format!("duplicate key {k:?}")));
        }
        values[slot] = Some(v.trim().to_string());
    }
    let take = |i: usize| -> Result<&str> {
        values[i]
            .as_deref()
            .ok_or_else(|| Error::Manifest(format!("missing required key {:?}", KEYS[i])))
    };
    let uint = |i: usize| -> Result<usize> {
        let raw = take(i)?;
        raw.parse().map_err(|_| bad_value(KEYS[i], raw))
    };

    let raw_dir = PathBuf::from(take(0)?);
    let frame_dir = if raw_dir.is_relative() {
        path.parent().unwrap_or(Path::new(".")).join(raw_dir)
    } else {
        raw_dir
    };
    let manifest = VideoManifest {
        frame_dir,
        frame_pattern: take(1)?.to_string(),
        frame_count: uint(2)?,
        fps: parse_fps(take(3)?)?,
        width: uint(4)?,
        height: uint(5)?,
    };
    if manifest.width == 0 || manifest.height == 0 {
        return Err(Error::Manifest("width and height must be at least 1".into()));
    }
    format_frame_name(&manifest.frame_pattern, 0)?;

    if !manifest.frame_dir.is_dir() {
        if manifest.frame_count == 0 {
            return Ok(manifest);
        }
        return Err(Error::Manifest(format!(
            "frame_dir {} does not exist",
            manifest.frame_dir.display()
        )));
    }
    for i in 0..manifest.frame_count {
        if !manifest.frame_path(i)?.is_file() {
            return Err(Error::Manifest(format!(
                "frame_count mismatch: frame {i} missing (declared {})",
                manifest.frame_count
            )));
        }
    }
    if manifest.frame_path(manifest.frame_count)?.is_file() {
        return Err(Error::Manifest(format!(
            "frame_count mismatch: directory holds more than {} frames",
            manifest.frame_count
        )));
    }
    Ok(manifest)
}

/// Decode a binary P6 PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 {
        return Err(Error::MalformedPpm("file too short".into()));
    }
    if &bytes[..2] != b"P6" {
        return Err(Error::UnsupportedFormat(format!(
            "magic {:?}, only P6 is supported",
            String::from_utf8_lossy(&bytes[..2])
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::MalformedPpm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPpm("expected a number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::MalformedPpm("number out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedPpm("missing whitespace after maxval".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, need 255")));
    }
    if w == 0 || h == 0 {
        return Err(Error::MalformedPpm("zero dimension".into()));
    }
    let need = w * h * 3;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(Error::MalformedPpm(format!(
            "pixel data truncated: {} of {need} bytes",
            body.len()
        )));
    }
    Frame::from_vec(w, h, 3, body[..need].to_vec())
}

/// Encode a 3-channel frame as binary P6.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    assert_eq!(frame.channels, 3, "P6 needs 3 channels");
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ppm(frame)).map_err(|e| Error::io(path, e))
}

/// Load frame `index`, checking its size against the manifest.
pub fn read_frame(manifest: &VideoManifest, index: usize) -> Result<Frame> {
    if index >= manifest.frame_count {
        return Err(Error::FrameOutOfRange {
            index,
            count: manifest.frame_count,
        });
    }
    let path = manifest.frame_path(index)?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let frame = decode_ppm(&bytes)?;
    if frame.width != manifest.width || frame.height != manifest.height {
        return Err(Error::DimensionMismatch {
            expected_w: manifest.width,
            expected_h: manifest.height,
            got_w: frame.width,
            got_h: frame.height,
        });
    }
    Ok(frame)
}

/// A decoded run of consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub fps: f64,
    pub origin_frame: usize,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A window position within a video; frames are loaded on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipWindow {
    pub origin_frame: usize,
    pub len: usize,
}

impl ClipWindow {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.origin_frame..self.origin_frame + self.len
    }

    pub fn load(&self, manifest: &VideoManifest) -> Result<VideoClip> {
        let frames = self
            .frames()
            .map(|i| read_frame(manifest, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoClip {
            frames,
            fps: manifest.fps,
            origin_frame: self.origin_frame,
        })
    }
}

/// Window origins `0, stride, 2·stride, …` for which a full window fits.
#[derive(Clone, Debug)]
pub struct Windows {
    next: usize,
    remaining: usize,
    stride: usize,
    window_len: usize,
    /// Set when the video is shorter than one window.
    pub too_short: bool,
}

impl Iterator for Windows {
    type Item = ClipWindow;

    fn next(&mut self) -> Option<ClipWindow> {
        if self.remaining == 0 {
            return None;
        }
        let w = ClipWindow {
            origin_frame: self.next,
            len: self.window_len,
        };
        self.next += self.stride;
        self.remaining -= 1;
        Some(w)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for Windows {}

/// Number of full windows: `⌊(frame_count − window_len)/stride⌋ + 1`, or 0.
pub fn window_count(frame_count: usize, window_len: usize, stride: usize) -> usize {
    if window_len > frame_count || stride == 0 || window_len == 0 {
        0
    } else {
        (frame_count - window_len) / stride + 1
    }
}

pub fn iter_windows(manifest: &VideoManifest, window_len: usize, stride: usize) -> Windows {
    assert!(stride >= 1, "stride must be at least 1");
    let too_short = window_len > manifest.frame_count;
    if too_short {
        warn!(
            "video has {} frames, shorter than one {window_len}-frame window",
            manifest.frame_count
        );
    }
    Windows {
        next: 0,
        remaining: window_count(manifest.frame_count, window_len, stride),
        stride,
        window_len,
        too_short,
    }
}

/// Write `frames` plus a manifest into `dir`; returns the manifest path.
pub fn write_video(dir: &Path, frames: &[Frame], fps: f64, pattern: &str) -> Result<PathBuf> {
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    let (w, h) = frames.first().map_or((1, 1), |f| (f.width, f.height));
    for (i, f) in frames.iter().enumerate() {
        write_ppm(&frame_dir.join(format_frame_name(pattern, i)?), f)?;
    }
    let manifest = VideoManifest {
        frame_dir: frame_dir.clone(),
        frame_pattern: pattern.to_string(),
        frame_count: frames.len(),
        fps,
        width: w,
        height: h,
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.to_text("frames")).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
