//! Symbolic ground truth: Standard MIDI File I/O and the per-window onset
//! labels used for training.

mod labels;
mod smf;

pub use labels::{
    cull_empty, nearest_frame, onsets_to_frames, window_label, FrameOnsetMap, WindowLabel,
    CENTER_FRAMES, KEEP_EMPTY_FRACTION,
};
pub use smf::{parse_smf, parse_smf_detailed, write_smf, ParsedSmf, DIVISION, NOTE_LENGTH_SECS, TEMPO_US};

use crate::error::{Error, Result};

/// Number of piano keys, one model head each.
pub const NUM_KEYS: usize = 88;
pub const LOWEST_PITCH: u8 = 21;
pub const HIGHEST_PITCH: u8 = 108;

/// A note onset: start time in seconds and MIDI pitch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoteEvent {
    pub onset: f64,
    pub pitch: u8,
}

impl NoteEvent {
    pub fn new(onset: f64, pitch: u8) -> Result<Self> {
        if !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&pitch) {
            return Err(Error::PitchOutOfRange(pitch));
        }
        if !(onset >= 0.0) || !onset.is_finite() {
            return Err(Error::Smf(format!("onset {onset} must be a non-negative time")));
        }
        Ok(NoteEvent { onset, pitch })
    }

    /// Key index in `0..88`.
    pub fn key(&self) -> usize {
        (self.pitch - LOWEST_PITCH) as usize
    }

    pub fn from_key(onset: f64, key: usize) -> Self {
        debug_assert!(key < NUM_KEYS);
        NoteEvent {
            onset,
            pitch: LOWEST_PITCH + key as u8,
        }
    }
}

/// Sort by onset, then pitch.
pub fn sort_notes(notes: &mut [NoteEvent]) {
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
}
