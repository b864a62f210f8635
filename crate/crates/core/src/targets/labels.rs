use std::collections::BTreeSet;

use rand::Rng;

use super::{NoteEvent, NUM_KEYS};
use crate::video_io::WINDOW_LEN;

/// The two window frames (0-based, relative to the window start) whose onset
/// marks decide a window's label.
pub const CENTER_FRAMES: (usize, usize) = (7, 8);
/// Fraction of all-zero windows kept for training.
pub const KEEP_EMPTY_FRACTION: f64 = 0.05;

/// Nearest frame to `onset` seconds, exact halves rounding up.
pub fn nearest_frame(onset: f64, fps: f64) -> usize {
    // the small bias keeps halves computed in floating point (29.5/30·30) on the upper side
    (onset * fps + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Per-key onset marks: every onset marks its nearest frame and both neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOnsetMap {
    pub fps: f64,
    pub keys: Vec<BTreeSet<usize>>,
}

impl FrameOnsetMap {
    pub fn empty(fps: f64) -> Self {
        FrameOnsetMap {
            fps,
            keys: vec![BTreeSet::new(); NUM_KEYS],
        }
    }

    pub fn is_marked(&self, key: usize, frame: usize) -> bool {
        self.keys[key].contains(&frame)
    }
}

pub fn onsets_to_frames(notes: &[NoteEvent], fps: f64) -> FrameOnsetMap {
    assert!(fps > 0.0, "fps must be positive");
    let mut map = FrameOnsetMap::empty(fps);
    for n in notes {
        let f = nearest_frame(n.onset, fps);
        let set = &mut map.keys[n.key()];
        if f > 0 {
            set.insert(f - 1);
        }
        set.insert(f);
        set.insert(f + 1);
    }
    map
}

/// Training target for one 16-frame window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowLabel {
    pub start: usize,
    pub values: [f32; NUM_KEYS],
}

impl WindowLabel {
    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// 1 when both center frames are marked, 0.5 when one is, 0 otherwise.
pub fn window_label(map: &FrameOnsetMap, start: usize) -> WindowLabel {
    debug_assert!(CENTER_FRAMES.1 < WINDOW_LEN);
    let (a, b) = (start + CENTER_FRAMES.0, start + CENTER_FRAMES.1);
    let mut values = [0.0f32; NUM_KEYS];
    for (k, v) in values.iter_mut().enumerate() {
        let hits = map.is_marked(k, a) as u8 + map.is_marked(k, b) as u8;
        *v = hits as f32 * 0.5;
    }
    WindowLabel { start, values }
}

/// Keep every window with a positive label; keep each all-zero window with
/// probability `keep_fraction`.
pub fn cull_empty<T, R: Rng>(
    samples: Vec<(T, WindowLabel)>,
    rng: &mut R,
    keep_fraction: f64,
) -> Vec<(T, WindowLabel)> {
    assert!((0.0..=1.0).contains(&keep_fraction), "keep_fraction must be in [0, 1]");
    samples
        .into_iter()
        .filter(|(_, label)| !label.is_empty() || rng.random::<f64>() < keep_fraction)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn note(t: f64, p: u8) -> NoteEvent {
        NoteEvent::new(t, p).unwrap()
    }

    #[test]
    fn one_second_at_30fps() {
        let m = onsets_to_frames(&[note(1.0, 60)], 30.0);
        assert_eq!(m.keys[39].iter().copied().collect::<Vec<_>>(), vec![29, 30, 31]);
    }

    #[test]
    fn zero_onset_clips() {
        let m = onsets_to_frames(&[note(0.0, 21)], 30.0);
        assert_eq!(m.keys[0].iter().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn half_frame_rounds_up() {
        assert_eq!(nearest_frame(29.5 / 30.0, 30.0), 30);
        assert_eq!(nearest_frame(0.98333, 30.0), 29);
        assert_eq!(nearest_frame(0.9834, 30.0), 30);
    }

    fn labels_for(map: &FrameOnsetMap, key: usize, starts: std::ops::Range<usize>) -> Vec<(usize, f32)> {
        starts
            .map(|s| (s, window_label(map, s).values[key]))
            .filter(|&(_, v)| v > 0.0)
            .collect()
    }

    #[test]
    fn isolated_onset_at_frame_100() {
        let m = onsets_to_frames(&[note(100.0 / 30.0, 60)], 30.0);
        assert_eq!(
            labels_for(&m, 39, 0..200),
            vec![(91, 0.5), (92, 1.0), (93, 1.0), (94, 0.5)]
        );
    }

    #[test]
    fn no_onsets_all_zero() {
        let m = onsets_to_frames(&[], 30.0);
        assert!((0..50).all(|s| window_label(&m, s).is_empty()));
    }

    #[test]
    fn nearby_onsets_merge() {
        let m = onsets_to_frames(&[note(100.0 / 30.0, 60), note(102.0 / 30.0, 60)], 30.0);
        // union of marks is 99..=103
        let brute: Vec<(usize, f32)> = (0..200)
            .map(|s| {
                let hit = |f: usize| (99..=103).contains(&f) as u8;
                (s, (hit(s + 7) + hit(s + 8)) as f32 * 0.5)
            })
            .filter(|&(_, v)| v > 0.0)
            .collect();
        assert_eq!(labels_for(&m, 39, 0..200), brute);
        assert_eq!(brute.iter().map(|&(_, v)| v).sum::<f32>(), 5.0);
    }

    fn label(positive: bool) -> WindowLabel {
        let mut values = [0.0; NUM_KEYS];
        if positive {
            values[3] = 0.5;
        }
        WindowLabel { start: 0, values }
    }

    #[test]
    fn cull_keeps_positives() {
        let samples: Vec<_> = (0..100).map(|i| (i, label(true))).collect();
        let out = cull_empty(samples.clone(), &mut ChaCha8Rng::seed_from_u64(0), 0.05);
        assert_eq!(out, samples);
    }

    #[test]
    fn cull_rate_binomial() {
        let samples: Vec<_> = (0..10_000).map(|i| (i, label(false))).collect();
        let out = cull_empty(samples, &mut ChaCha8Rng::seed_from_u64(42), 0.05);
        assert!((400..=600).contains(&out.len()), "kept {}", out.len());
    }

    #[test]
    fn cull_zero_fraction() {
        let samples: Vec<_> = (0..1000).map(|i| (i, label(i % 10 == 0))).collect();
        let out = cull_empty(samples, &mut ChaCha8Rng::seed_from_u64(1), 0.0);
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|(_, l)| !l.is_empty()));
    }

    proptest! {
        #[test]
        fn isolated_onset_label_mass_is_three(frame in 20usize..5000, key in 0usize..88) {
            let m = onsets_to_frames(&[NoteEvent::from_key(frame as f64 / 30.0, key)], 30.0);
            let total: f32 = (0..frame + 20).map(|s| window_label(&m, s).values[key]).sum();
            prop_assert_eq!(total, 3.0);
        }

        #[test]
        fn labels_translate(frames in prop::collection::vec(0usize..300, 0..6), shift in 0usize..100, s in 0usize..300) {
            let notes: Vec<_> = frames.iter().map(|&f| NoteEvent::from_key(f as f64 / 30.0 + 1.0, 5)).collect();
            let shifted: Vec<_> = notes.iter().map(|n| NoteEvent::from_key(n.onset + shift as f64 / 30.0, 5)).collect();
            let a = window_label(&onsets_to_frames(&notes, 30.0), s);
            let b = window_label(&onsets_to_frames(&shifted, 30.0), s + shift);
            prop_assert_eq!(a.values, b.values);
        }

        #[test]
        fn cull_never_drops_positive(flags in prop::collection::vec(any::<bool>(), 0..200), seed in any::<u64>()) {
            let samples: Vec<_> = flags.iter().enumerate().map(|(i, &p)| (i, label(p))).collect();
            let out = cull_empty(samples, &mut ChaCha8Rng::seed_from_u64(seed), 0.3);
            let kept: Vec<usize> = out.iter().map(|(i, _)| *i).collect();
            for (i, &p) in flags.iter().enumerate() {
                if p { prop_assert!(kept.contains(&i)); }
            }
        }
    }
}
