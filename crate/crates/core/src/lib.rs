//! Visual piano transcription: a top-down keyboard video in, onset-only MIDI
//! out. The crate holds the whole pipeline (frame I/O, keyboard cropping,
//! preprocessing, label generation, a small video transformer with its
//! training loop, post-processing, evaluation, and a synthetic data
//! generator) plus the `pianovt` command-line front end.

// `!(x > 0.0)` rejects NaN together with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod keyboard_region;
pub mod metrics;
pub mod model;
pub mod par;
pub mod preprocess;
pub mod synthkbd;
pub mod targets;
pub mod training;
pub mod transcribe;
pub mod video_io;

pub use error::{Error, Result};
