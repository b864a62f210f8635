//! Whole-video inference and post-processing: sliding 16-frame windows,
//! temporal Gaussian smoothing, thresholding, and one onset per detected run.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::keyboard_region::{crop_frame, resolve_box, BoundingBox};
use crate::model::{forward, ModelParams};
use crate::par;
use crate::preprocess::{ModelImage, PreprocSettings};
use crate::targets::{sort_notes, NoteEvent, NUM_KEYS};
use crate::video_io::{read_frame, window_count, VideoManifest, WINDOW_LEN};

/// Source frame (relative to the window start) a window's prediction is
/// attributed to.
pub const ATTRIBUTION_OFFSET: usize = 8;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_RADIUS: usize = 16;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Windows evaluated per batch while streaming through a video.
const CHUNK_WINDOWS: usize = 128;

/// Per-key, per-frame onset likelihoods, stored key-major (`88 × cols`).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    pub cols: usize,
    pub values: Vec<f32>,
    /// Source frame index of column 0.
    pub first_frame: usize,
    pub fps: f64,
}

impl ActivationMatrix {
    pub fn zeros(cols: usize, first_frame: usize, fps: f64) -> Self {
        ActivationMatrix {
            cols,
            values: vec![0.0; NUM_KEYS * cols],
            first_frame,
            fps,
        }
    }

    pub fn row(&self, key: usize) -> &[f32] {
        &self.values[key * self.cols..(key + 1) * self.cols]
    }

    pub fn row_mut(&mut self, key: usize) -> &mut [f32] {
        &mut self.values[key * self.cols..(key + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, key: usize, col: usize) -> f32 {
        self.values[key * self.cols + col]
    }

    /// `frame,key,value` rows with a header, frames in source numbering.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,key,value\n");
        for col in 0..self.cols {
            for key in 0..NUM_KEYS {
                let _ = writeln!(s, "{},{},{}", self.first_frame + col, key, self.get(key, col));
            }
        }
        s
    }
}

/// Thresholded activations, key-major like [`ActivationMatrix`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub cols: usize,
    pub values: Vec<bool>,
}

impl BinaryMatrix {
    pub fn row(&self, key: usize) -> &[bool] {
        &self.values[key * self.cols..(key + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlidingOptions {
    pub preproc: PreprocSettings,
    /// Drop the final window so the matrix has `frame_count − 16` columns.
    pub drop_last_window: bool,
}

/// Stack consecutive model images into one `T × S × S × C` clip.
pub fn assemble_clip(frames: &[ModelImage]) -> Vec<f32> {
    let mut clip = Vec::with_capacity(frames.iter().map(|f| f.pixels.data.len()).sum());
    for f in frames {
        clip.extend_from_slice(&f.pixels.data);
    }
    clip
}

/// Model input for one frame of the video.
pub fn prepare_frame(
    manifest: &VideoManifest,
    index: usize,
    keyboard: &BoundingBox,
    preproc: &PreprocSettings,
) -> Result<ModelImage> {
    let frame = read_frame(manifest, index)?;
    let crop = crop_frame(&frame, keyboard)?;
    preproc.apply(&crop.image)
}

/// Run the model on every 16-frame window. Column `s` holds window `s` and is
/// attributed to source frame `s + 8`.
pub fn sliding_predict(
    manifest: &VideoManifest,
    keyboard: &BoundingBox,
    params: &ModelParams<f32>,
    opts: &SlidingOptions,
) -> Result<ActivationMatrix> {
    let cfg = &params.config;
    if manifest.frame_count < WINDOW_LEN {
        return Err(Error::VideoTooShort {
            frames: manifest.frame_count,
            needed: WINDOW_LEN,
        });
    }
    if cfg.frames != WINDOW_LEN
        || cfg.resolution != opts.preproc.resolution
        || cfg.channels != opts.preproc.color.channels()
    {
        return Err(Error::Shape(format!(
            "model {cfg} does not match preprocessing ({}px, {} channel(s), {WINDOW_LEN} frames)",
            opts.preproc.resolution,
            opts.preproc.color.channels()
        )));
    }
    // resolve (and warn about) the box once rather than per frame
    let (keyboard, _) = resolve_box(keyboard, manifest.width, manifest.height)?;

    let mut cols = window_count(manifest.frame_count, WINDOW_LEN, 1);
    if opts.drop_last_window {
        cols -= 1;
    }
    let mut act = ActivationMatrix::zeros(cols, ATTRIBUTION_OFFSET, manifest.fps);
    let mut start = 0;
    while start < cols {
        let n = CHUNK_WINDOWS.min(cols - start);
        let frames: Vec<ModelImage> = par::map_range(n + WINDOW_LEN - 1, |i| {
            prepare_frame(manifest, start + i, &keyboard, &opts.preproc)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let clips: Vec<Vec<f32>> = (0..n)
            .map(|w| assemble_clip(&frames[w..w + WINDOW_LEN]))
            .collect();
        let probs = forward(params, &clips)?;
        for (w, p) in probs.iter().enumerate() {
            for (key, &v) in p.iter().enumerate() {
                act.values[key * cols + start + w] = v;
            }
        }
        start += n;
    }
    Ok(act)
}

/// Normalized discrete Gaussian of length `2·radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let r = radius as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric reflection of `i` into `[0, len)`.
#[inline]
pub fn reflect_index(i: i64, len: usize) -> usize {
    let period = 2 * len as i64;
    let m = i.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Convolve every key row with a normalized Gaussian along time, reflecting at
/// both ends.
pub fn smooth_time(act: &ActivationMatrix, sigma: f64, radius: usize) -> ActivationMatrix {
    let kernel = gaussian_kernel(sigma, radius);
    let cols = act.cols;
    let r = radius as i64;
    let mut out = act.clone();
    par::for_each_chunk_mut(&mut out.values, cols.max(1), |key, dst| {
        let src = act.row(key);
        for (c, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (j, &w) in kernel.iter().enumerate() {
                let i = c as i64 + j as i64 - r;
                acc += w * src[reflect_index(i, cols)] as f64;
            }
            *d = acc.clamp(0.0, 1.0) as f32;
        }
    });
    out
}

/// `value ≥ threshold`.
pub fn binarize(act: &ActivationMatrix, threshold: f32) -> BinaryMatrix {
    BinaryMatrix {
        cols: act.cols,
        values: act.values.iter().map(|&v| v >= threshold).collect(),
    }
}

/// One onset per maximal run of ones, at the run midpoint (rounded down).
pub fn extract_notes(binary: &BinaryMatrix, first_frame: usize, fps: f64) -> Vec<NoteEvent> {
    let mut notes = Vec::new();
    for key in 0..NUM_KEYS {
        let row = binary.row(key);
        let mut c = 0;
        while c < row.len() {
            if !row[c] {
                c += 1;
                continue;
            }
            let run_start = c;
            while c + 1 < row.len() && row[c + 1] {
                c += 1;
            }
            let mid = (run_start + c) / 2;
            notes.push(NoteEvent::from_key((first_frame + mid) as f64 / fps, key));
            c += 1;
        }
    }
    sort_notes(&mut notes);
    notes
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostProcess {
    pub sigma: f64,
    pub radius: usize,
    pub threshold: f32,
}

impl Default for PostProcess {
    fn default() -> Self {
        PostProcess {
            sigma: DEFAULT_SIGMA,
            radius: DEFAULT_RADIUS,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Smooth, threshold, and extract onsets.
pub fn postprocess(act: &ActivationMatrix, pp: &PostProcess) -> Vec<NoteEvent> {
    let smoothed = smooth_time(act, pp.sigma, pp.radius);
    extract_notes(&binarize(&smoothed, pp.threshold), act.first_frame, act.fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_row(values: &[f32], key: usize) -> ActivationMatrix {
        let mut a = ActivationMatrix::zeros(values.len(), 8, 30.0);
        a.row_mut(key).copy_from_slice(values);
        a
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(1.0, 16);
        assert_eq!(k.len(), 33);
        assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_row_unchanged() {
        let a = one_row(&[0.7; 50], 3);
        let s = smooth_time(&a, 1.0, 16);
        assert!(s.row(3).iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn impulse_peaks() {
        let mut v = vec![0.0f32; 60];
        v[30] = 1.0;
        let s = smooth_time(&one_row(&v, 0), 1.0, 16);
        assert_abs_diff_eq!(s.get(0, 30), 0.398_942_3, epsilon = 1e-6);
        v[31] = 1.0;
        let s = smooth_time(&one_row(&v, 0), 1.0, 16);
        assert_abs_diff_eq!(s.get(0, 30), 0.398_942_3 + 0.241_970_7, epsilon = 1e-6);
    }

    #[test]
    fn threshold_is_inclusive() {
        let b = binarize(&one_row(&[0.5, 0.49999], 0), 0.5);
        assert_eq!(&b.row(0)[..2], &[true, false]);
    }

    #[test]
    fn isolated_spike_suppressed_pair_survives() {
        let mut v = vec![0.0f32; 60];
        v[30] = 1.0;
        let notes = postprocess(&one_row(&v, 5), &PostProcess::default());
        assert!(notes.is_empty());
        v[31] = 1.0;
        let notes = postprocess(&one_row(&v, 5), &PostProcess::default());
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].pitch, 26);
    }

    fn runs(cols: usize, ranges: &[(usize, usize)]) -> BinaryMatrix {
        let mut values = vec![false; NUM_KEYS * cols];
        for &(a, b) in ranges {
            values[a..=b].fill(true);
        }
        BinaryMatrix { cols, values }
    }

    #[test]
    fn run_midpoints() {
        let notes = extract_notes(&runs(20, &[(10, 14)]), 0, 30.0);
        assert_eq!(notes, vec![NoteEvent::from_key(12.0 / 30.0, 0)]);
        let notes = extract_notes(&runs(20, &[(10, 13)]), 0, 30.0);
        assert_eq!(notes, vec![NoteEvent::from_key(11.0 / 30.0, 0)]);
        let notes = extract_notes(&runs(20, &[(0, 0), (19, 19)]), 8, 30.0);
        assert_eq!(notes.len(), 2);
        assert_eq!(notes[0].onset, 8.0 / 30.0);
        assert!(extract_notes(&runs(20, &[]), 0, 30.0).is_empty());
    }

    #[test]
    fn run_centered_on_frame_gives_exact_time() {
        // run over columns 40..=44 with first_frame 8 is centered on frame 50
        let notes = extract_notes(&runs(60, &[(40, 44)]), 8, 30.0);
        assert_eq!(notes[0].onset, 50.0 / 30.0);
    }

    #[test]
    fn csv_dump() {
        let a = one_row(&[0.25, 1.0], 0);
        let csv = a.to_csv();
        assert!(csv.starts_with("frame,key,value\n8,0,0.25\n8,1,0\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * NUM_KEYS);
    }

    #[test]
    fn reflection() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect_index(-20, 3), 1);
    }

    proptest! {
        #[test]
        fn interior_mass_conserved(pos in 17usize..83, vals in prop::collection::vec(0.0f32..1.0, 1..5)) {
            let mut v = vec![0.0f32; 100];
            for (i, &x) in vals.iter().enumerate() {
                if pos + i < 83 { v[pos + i] = x; }
            }
            let s = smooth_time(&one_row(&v, 0), 1.0, 16);
            let a: f64 = v.iter().map(|&x| x as f64).sum();
            let b: f64 = s.row(0).iter().map(|&x| x as f64).sum();
            prop_assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }

        #[test]
        fn one_onset_per_run(bits in prop::collection::vec(any::<bool>(), 1..80)) {
            let cols = bits.len();
            let mut values = vec![false; NUM_KEYS * cols];
            values[..cols].copy_from_slice(&bits);
            let b = BinaryMatrix { cols, values };
            let expected = bits.iter().enumerate().filter(|&(i, &x)| x && (i == 0 || !bits[i - 1])).count();
            prop_assert_eq!(extract_notes(&b, 0, 30.0).len(), expected);
        }
    }
}
