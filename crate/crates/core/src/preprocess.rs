//! Keyboard crop → square model input: the four fit strategies, grayscale,
//! color normalization, and the training-time augmentations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::keyboard_region::{BoundingBox, Crop};

/// Default model input resolution.
pub const DEFAULT_RESOLUTION: usize = 224;
/// Height multiplier that turns a 16:9 crop into roughly 5:12.
pub const DEFAULT_ASPECT_FACTOR: f64 = 4.3;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// How a rectangular crop is fit into a square.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum FitMode {
    /// Resize both axes independently.
    #[default]
    Stretch,
    /// Scale the height by `factor`, then fit preserving ratio with black letterbox.
    AspectMod(f64),
    /// Left half on top of right half, fit preserving ratio with black letterbox.
    SplitStack,
    /// Left half on top of right half, stretched to fill the square.
    SplitStackStretch,
}

impl fmt::Display for FitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitMode::Stretch => write!(f, "stretch"),
            FitMode::AspectMod(k) => write!(f, "aspect:{k}"),
            FitMode::SplitStack => write!(f, "split"),
            FitMode::SplitStackStretch => write!(f, "split-stretch"),
        }
    }
}

impl FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stretch" => Ok(FitMode::Stretch),
            "split" => Ok(FitMode::SplitStack),
            "split-stretch" => Ok(FitMode::SplitStackStretch),
            "aspect" => Ok(FitMode::AspectMod(DEFAULT_ASPECT_FACTOR)),
            _ => {
                let k = s
                    .strip_prefix("aspect:")
                    .and_then(|k| k.parse::<f64>().ok())
                    .ok_or_else(|| Error::Usage(format!("unknown fit mode {s:?}")))?;
                if !(k > 0.0) || !k.is_finite() {
                    return Err(Error::Usage(format!("aspect factor must be positive, got {k}")));
                }
                Ok(FitMode::AspectMod(k))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ColorMode {
    /// Single luma channel in `[0, 1]`, not normalized.
    Grayscale,
    /// Three channels in `[0, 1]`.
    Rgb,
    /// Three channels standardized with the ImageNet statistics.
    #[default]
    RgbNormalized,
}

impl fmt::Display for ColorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorMode::Grayscale => "grayscale",
            ColorMode::Rgb => "rgb",
            ColorMode::RgbNormalized => "rgb-normalized",
        })
    }
}

impl FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grayscale" => Ok(ColorMode::Grayscale),
            "rgb" => Ok(ColorMode::Rgb),
            "rgb-normalized" => Ok(ColorMode::RgbNormalized),
            _ => Err(Error::Usage(format!("unknown color mode {s:?} (grayscale|rgb|rgb-normalized)"))),
        }
    }
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Grayscale => 1,
            _ => 3,
        }
    }
}

/// Model-ready square image.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelImage {
    pub pixels: Image<f32>,
    pub normalized: bool,
}

impl ModelImage {
    pub fn resolution(&self) -> usize {
        self.pixels.width
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels
    }
}

/// Everything needed to turn a crop into a model image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocSettings {
    pub fit: FitMode,
    pub resolution: usize,
    pub color: ColorMode,
}

impl Default for PreprocSettings {
    fn default() -> Self {
        PreprocSettings {
            fit: FitMode::Stretch,
            resolution: DEFAULT_RESOLUTION,
            color: ColorMode::RgbNormalized,
        }
    }
}

impl PreprocSettings {
    pub fn apply(&self, crop: &Image<u8>) -> Result<ModelImage> {
        let unit = crop.to_unit_f32();
        // luma is linear, so converting before the resize gives the same result
        // with a third of the resampling work
        let unit = match self.color {
            ColorMode::Grayscale => to_grayscale(&unit),
            _ => unit,
        };
        let fitted = fit_square(&unit, self.fit, self.resolution)?;
        match self.color {
            ColorMode::RgbNormalized => normalize_rgb(&fitted),
            _ => Ok(ModelImage {
                pixels: fitted,
                normalized: false,
            }),
        }
    }
}

/// Separable triangle-filter weights for resampling `src` samples to `dst`.
/// The filter widens with the downscale factor, so shrinking averages every
/// source pixel instead of skipping some.
fn filter_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f32>)> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| (1.0 - ((j as f64 + 0.5 - center) / support).abs()).max(0.0))
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w.into_iter().map(|v| v as f32).collect())
        })
        .collect()
}

/// Bilinear resize (antialiased when shrinking). Same-size input is copied.
pub fn resize_bilinear(img: &Image<f32>, width: usize, height: usize) -> Image<f32> {
    assert!(width > 0 && height > 0);
    if img.width == width && img.height == height {
        return img.clone();
    }
    let c = img.channels;
    let mut tmp = Image::<f32>::new(width, img.height, c);
    let wx = filter_weights(img.width, width);
    for y in 0..img.height {
        for (x, (lo, ws)) in wx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &w) in ws.iter().enumerate() {
                    acc += w * img.get(lo + k, y, ch);
                }
                tmp.set(x, y, ch, acc);
            }
        }
    }
    let mut out = Image::<f32>::new(width, height, c);
    let wy = filter_weights(img.height, height);
    for (y, (lo, ws)) in wy.iter().enumerate() {
        for x in 0..width {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &w) in ws.iter().enumerate() {
                    acc += w * tmp.get(x, lo + k, ch);
                }
                out.set(x, y, ch, acc);
            }
        }
    }
    out
}

/// Width and height after scaling only the height by `factor`.
pub fn aspect_mod_dims(width: usize, height: usize, factor: f64) -> (usize, usize) {
    (width, ((height as f64 * factor).round() as usize).max(1))
}

/// Left half (gets the extra column when the width is odd) stacked above the
/// right half; a short right half is padded with black on its right edge.
pub fn split_stack<T: Copy + Default>(img: &Image<T>) -> Image<T> {
    let left_w = img.width.div_ceil(2);
    let right_w = img.width / 2;
    let mut out = Image::new(left_w, img.height * 2, img.channels);
    out.paste(&img.sub_image(0, 0, left_w, img.height), 0, 0);
    if right_w > 0 {
        out.paste(&img.sub_image(left_w, 0, right_w, img.height), 0, img.height);
    }
    out
}

/// Shrink `(w, h)` to fit inside `target × target` keeping the ratio. Images
/// that already fit are left at their size.
fn fit_dims(w: f64, h: f64, target: usize) -> (usize, usize) {
    let scale = (target as f64 / w).min(target as f64 / h).min(1.0);
    let nw = ((w * scale).round() as usize).clamp(1, target);
    let nh = ((h * scale).round() as usize).clamp(1, target);
    (nw, nh)
}

/// Center `img` on a black `target × target` canvas.
fn letterbox(img: &Image<f32>, target: usize) -> Image<f32> {
    let mut canvas = Image::new(target, target, img.channels);
    canvas.paste(img, (target - img.width) / 2, (target - img.height) / 2);
    canvas
}

/// Fit a rectangular crop into a `target × target` square.
pub fn fit_square(img: &Image<f32>, mode: FitMode, target: usize) -> Result<Image<f32>> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::Image(format!(
            "crop {}x{} too small to fit, need at least 2x2",
            img.width, img.height
        )));
    }
    if target == 0 {
        return Err(Error::Image("target resolution must be positive".into()));
    }
    Ok(match mode {
        FitMode::Stretch => resize_bilinear(img, target, target),
        FitMode::AspectMod(factor) => {
            if !(factor > 0.0) {
                return Err(Error::Image(format!("aspect factor must be positive, got {factor}")));
            }
            // both scalings fold into one resample of the original crop
            let (nw, nh) = fit_dims(img.width as f64, img.height as f64 * factor, target);
            letterbox(&resize_bilinear(img, nw, nh), target)
        }
        FitMode::SplitStack => {
            let stacked = split_stack(img);
            let (nw, nh) = fit_dims(stacked.width as f64, stacked.height as f64, target);
            letterbox(&resize_bilinear(&stacked, nw, nh), target)
        }
        FitMode::SplitStackStretch => resize_bilinear(&split_stack(img), target, target),
    })
}

/// BT.601 luma of a `[0, 1]` color image; single-channel input passes through.
pub fn to_grayscale(img: &Image<f32>) -> Image<f32> {
    if img.channels == 1 {
        return img.clone();
    }
    assert_eq!(img.channels, 3, "grayscale expects 1 or 3 channels");
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

pub fn normalize_rgb(img: &Image<f32>) -> Result<ModelImage> {
    if img.channels != 3 {
        return Err(Error::NormalizeRequiresColor);
    }
    let mut out = img.clone();
    for p in out.data.chunks_exact_mut(3) {
        for c in 0..3 {
            p[c] = (p[c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    Ok(ModelImage {
        pixels: out,
        normalized: true,
    })
}

/// Per-side jitter range in pixels; positive moves a side away from the box
/// center, negative toward it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct JitterRange {
    pub lo: i64,
    pub hi: i64,
}

impl JitterRange {
    pub fn symmetric(r: i64) -> Self {
        JitterRange { lo: -r, hi: r }
    }

    pub fn is_zero(&self) -> bool {
        self.lo == 0 && self.hi == 0
    }
}

impl fmt::Display for JitterRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl FromStr for JitterRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("jitter range must be LO,HI, got {s:?}"));
        let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
        let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        Ok(JitterRange { lo, hi })
    }
}

const JITTER_ATTEMPTS: usize = 8;

/// Move each side of `b` independently by a uniform draw from `range`, clamped
/// to the `width × height` image. Draws that would invert the box are retried;
/// after 8 failures the box comes back unchanged.
pub fn jitter_box<R: Rng>(
    b: &BoundingBox,
    rng: &mut R,
    range: JitterRange,
    width: usize,
    height: usize,
) -> BoundingBox {
    if range.is_zero() {
        return *b;
    }
    for _ in 0..JITTER_ATTEMPTS {
        let mut d = [0i64; 4];
        for v in d.iter_mut() {
            *v = rng.random_range(range.lo..=range.hi);
        }
        let x0 = (b.x0 - d[0]).clamp(0, width as i64);
        let y0 = (b.y0 - d[1]).clamp(0, height as i64);
        let x1 = (b.x1 + d[2]).clamp(0, width as i64);
        let y1 = (b.y1 + d[3]).clamp(0, height as i64);
        if x0 < x1 && y0 < y1 {
            return BoundingBox {
                x0,
                y0,
                x1,
                y1,
                confidence: b.confidence,
            };
        }
    }
    *b
}

/// Valid value interval of each channel for a given representation.
fn channel_range(img: &ModelImage, c: usize) -> (f32, f32) {
    if img.normalized {
        (
            -IMAGENET_MEAN[c] / IMAGENET_STD[c],
            (1.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c],
        )
    } else {
        (0.0, 1.0)
    }
}

/// Add i.i.d. Gaussian noise with standard deviation `sigma` to every value,
/// clamped back into the representation's range.
pub fn add_noise<R: Rng>(img: &ModelImage, rng: &mut R, sigma: f64) -> ModelImage {
    let mut out = img.clone();
    if sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let c = out.pixels.channels;
    let ranges: Vec<(f32, f32)> = (0..c).map(|ch| channel_range(img, ch)).collect();
    for (i, v) in out.pixels.data.iter_mut().enumerate() {
        let (lo, hi) = ranges[i % c];
        *v = (*v + normal.sample(rng) as f32).clamp(lo, hi);
    }
    out
}

/// Crop helper used by the training loader: jitter the box (if requested),
/// crop, and preprocess.
pub fn crop_and_prepare(
    frame: &Image<u8>,
    b: &BoundingBox,
    settings: &PreprocSettings,
) -> Result<ModelImage> {
    let Crop { image, .. } = crate::keyboard_region::crop_frame(frame, b)?;
    settings.apply(&image)
}
