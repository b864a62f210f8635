use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("non-positive fps")]
    NonPositiveFps,

    #[error("frame index {index} out of range (frame_count {count})")]
    FrameOutOfRange { index: usize, count: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed ppm header: {0}")]
    MalformedPpm(String),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("no keyboard detected")]
    NoKeyboard,

    #[error("detections: {0}")]
    Detections(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("normalize_rgb requires color")]
    NormalizeRequiresColor,

    #[error("image: {0}")]
    Image(String),

    #[error("smf: {0}")]
    Smf(String),

    #[error("pitch {0} outside 21..=108")]
    PitchOutOfRange(u8),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("video too short: {frames} frames, need at least {needed}")]
    VideoTooShort { frames: usize, needed: usize },

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Stable identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Manifest(_) => "manifest",
            Error::NonPositiveFps => "non_positive_fps",
            Error::FrameOutOfRange { .. } => "frame_out_of_range",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::MalformedPpm(_) => "malformed_ppm",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoKeyboard => "no_keyboard",
            Error::Detections(_) => "detections",
            Error::InvalidBox(_) => "invalid_box",
            Error::NormalizeRequiresColor => "normalize_requires_color",
            Error::Image(_) => "image",
            Error::Smf(_) => "smf",
            Error::PitchOutOfRange(_) => "pitch_out_of_range",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Checkpoint(_) => "checkpoint",
            Error::VideoTooShort { .. } => "video_too_short",
            Error::Metrics(_) => "metrics",
            Error::GradCheck(_) => "gradcheck_failed",
            Error::Usage(_) => "usage",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
