use log::warn;

use super::{sort_notes, NoteEvent, HIGHEST_PITCH, LOWEST_PITCH};
use crate::error::{Error, Result};

/// Ticks per quarter note in written files.
pub const DIVISION: u16 = 480;
/// Microseconds per quarter note in written files (120 bpm).
pub const TEMPO_US: u32 = 500_000;
/// Written notes are released this long after their onset.
pub const NOTE_LENGTH_SECS: f64 = 0.1;
const VELOCITY: u8 = 64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedSmf {
    pub notes: Vec<NoteEvent>,
    /// Note-ons outside the piano range that were skipped.
    pub dropped: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Smf(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..4 {
            let b = self
                .u8("variable-length quantity")
                .map_err(|_| Error::Smf("truncated variable-length quantity".into()))?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Smf("variable-length quantity longer than 4 bytes".into()))
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

fn write_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 5];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Note-on (velocity > 0) with absolute tick.
struct RawOn {
    tick: u64,
    pitch: u8,
}

fn parse_track(data: &[u8], ons: &mut Vec<RawOn>, tempos: &mut Vec<(u64, u32)>) -> Result<()> {
    let mut r = Reader { bytes: data, pos: 0 };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    while !r.done() {
        tick += r.vlq()? as u64;
        let first = r.u8("event")?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            // running status: `first` is already the first data byte
            r.pos -= 1;
            running.ok_or_else(|| Error::Smf("data byte without running status".into()))?
        };
        match status {
            0xff => {
                running = None;
                let kind = r.u8("meta type")?;
                let len = r.vlq()? as usize;
                let body = r.take(len, "meta event")?;
                match kind {
                    0x2f => return Ok(()),
                    0x51 => {
                        if len != 3 {
                            return Err(Error::Smf("tempo event must have 3 bytes".into()));
                        }
                        let us = u32::from_be_bytes([0, body[0], body[1], body[2]]);
                        if us == 0 {
                            return Err(Error::Smf("zero tempo".into()));
                        }
                        tempos.push((tick, us));
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len, "sysex event")?;
            }
            0xf1..=0xfe => {
                return Err(Error::Smf(format!("unexpected system status {status:#04x} in track")));
            }
            _ => {
                running = Some(status);
                let kind = status & 0xf0;
                let n_data = if kind == 0xc0 || kind == 0xd0 { 1 } else { 2 };
                let d = r.take(n_data, "channel event")?;
                if kind == 0x90 && d[1] > 0 {
                    ons.push(RawOn { tick, pitch: d[0] });
                }
            }
        }
    }
    // tolerate a missing end-of-track at the end of the chunk
    Ok(())
}

/// Piecewise tick → seconds conversion over a sorted tempo map.
fn tick_to_seconds(tick: u64, tempos: &[(u64, u32)], division: u16) -> f64 {
    let mut secs = 0.0;
    let mut last_tick = 0u64;
    let mut us = TEMPO_US as f64;
    for &(t, tempo) in tempos {
        if t >= tick {
            break;
        }
        secs += (t - last_tick) as f64 * us / 1e6 / division as f64;
        last_tick = t;
        us = tempo as f64;
    }
    secs + (tick - last_tick) as f64 * us / 1e6 / division as f64
}

pub fn parse_smf_detailed(bytes: &[u8]) -> Result<ParsedSmf> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return Err(Error::Smf("bad magic: MThd missing".into()));
    }
    r.pos = 4;
    let hlen = r.u32("header")? as usize;
    if hlen < 6 {
        return Err(Error::Smf("header chunk too short".into()));
    }
    let format = r.u16("header")?;
    let ntracks = r.u16("header")?;
    let division = r.u16("header")?;
    r.take(hlen - 6, "header")?;
    if format > 1 {
        return Err(Error::Smf(format!("unsupported format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(Error::Smf("unsupported SMPTE time division".into()));
    }
    if division == 0 {
        return Err(Error::Smf("zero time division".into()));
    }

    let mut ons = Vec::new();
    let mut tempos = Vec::new();
    let mut seen = 0;
    while !r.done() && seen < ntracks {
        let id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        let body = r.take(len, "track chunk")?;
        if id == b"MTrk" {
            parse_track(body, &mut ons, &mut tempos)?;
            seen += 1;
        }
    }
    if seen < ntracks {
        return Err(Error::Smf(format!("expected {ntracks} tracks, found {seen}")));
    }
    tempos.sort_by_key(|&(t, _)| t);

    let mut dropped = 0;
    let mut notes = Vec::with_capacity(ons.len());
    for on in ons {
        if !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&on.pitch) {
            dropped += 1;
            continue;
        }
        notes.push(NoteEvent {
            onset: tick_to_seconds(on.tick, &tempos, division),
            pitch: on.pitch,
        });
    }
    if dropped > 0 {
        warn!("dropped {dropped} note(s) outside the piano range");
    }
    sort_notes(&mut notes);
    Ok(ParsedSmf { notes, dropped })
}

/// Note onsets from a format 0 or 1 file, sorted by (onset, pitch).
pub fn parse_smf(bytes: &[u8]) -> Result<Vec<NoteEvent>> {
    parse_smf_detailed(bytes).map(|p| p.notes)
}

fn secs_to_ticks(secs: f64) -> u64 {
    let ticks_per_sec = DIVISION as f64 * 1e6 / TEMPO_US as f64;
    (secs * ticks_per_sec).round() as u64
}

/// Format 0 file at 480 ticks/quarter and 120 bpm; every note is a velocity-64
/// note-on released 0.1 s later.
pub fn write_smf(notes: &[NoteEvent]) -> Result<Vec<u8>> {
    for n in notes {
        if !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&n.pitch) {
            return Err(Error::PitchOutOfRange(n.pitch));
        }
        if !(n.onset >= 0.0) || !n.onset.is_finite() {
            return Err(Error::Smf(format!("onset {} must be a non-negative time", n.onset)));
        }
    }
    let mut sorted = notes.to_vec();
    sort_notes(&mut sorted);
    let len_ticks = secs_to_ticks(NOTE_LENGTH_SECS);

    // (tick, is_on, pitch); releases sort before presses at the same tick
    let mut events: Vec<(u64, bool, u8)> = Vec::with_capacity(sorted.len() * 2);
    for n in &sorted {
        let t = secs_to_ticks(n.onset);
        events.push((t, true, n.pitch));
        events.push((t + len_ticks, false, n.pitch));
    }
    events.sort_by_key(|&(t, on, p)| (t, on, p));

    let mut track = Vec::new();
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&TEMPO_US.to_be_bytes()[1..]);
    let mut last = 0u64;
    for (t, on, pitch) in events {
        let delta = u32::try_from(t - last)
            .map_err(|_| Error::Smf("note onset too late to encode".into()))?;
        if delta > 0x0fff_ffff {
            return Err(Error::Smf("note onset too late to encode".into()));
        }
        write_vlq(&mut track, delta);
        if on {
            track.extend_from_slice(&[0x90, pitch, VELOCITY]);
        } else {
            track.extend_from_slice(&[0x80, pitch, 0]);
        }
        last = t;
    }
    write_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn smf(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    const EOT: [u8; 4] = [0x00, 0xff, 0x2f, 0x00];

    #[test]
    fn single_note_at_tick_480() {
        let mut t = vec![0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20];
        t.extend_from_slice(&[0x83, 0x60, 0x90, 60, 100]); // delta 480
        t.extend_from_slice(&EOT);
        let notes = parse_smf(&smf(0, 480, &[t])).unwrap();
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].pitch, 60);
        assert_abs_diff_eq!(notes[0].onset, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_track() {
        assert!(parse_smf(&smf(0, 480, &[EOT.to_vec()])).unwrap().is_empty());
    }

    #[test]
    fn running_status_and_velocity_zero() {
        // on 60, running-status on 64, then running-status velocity-0 "offs"
        let t = vec![
            0x00, 0x90, 60, 80, 0x00, 64, 80, 0x60, 60, 0, 0x00, 64, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let notes = parse_smf(&smf(0, 96, &[t])).unwrap();
        let pitches: Vec<u8> = notes.iter().map(|n| n.pitch).collect();
        assert_eq!(pitches, vec![60, 64]);
    }

    #[test]
    fn tempo_map_across_tracks() {
        // format 1: conductor track switches to 250000 us/qn at tick 480
        let mut conductor = vec![0x83, 0x60, 0xff, 0x51, 0x03, 0x03, 0xd0, 0x90];
        conductor.extend_from_slice(&EOT);
        let mut notes = vec![0x87, 0x40, 0x90, 72, 90]; // tick 960
        notes.extend_from_slice(&EOT);
        let parsed = parse_smf(&smf(1, 480, &[conductor, notes])).unwrap();
        // 480 ticks at 0.5 s/qn + 480 ticks at 0.25 s/qn
        assert_abs_diff_eq!(parsed[0].onset, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_pitches_dropped() {
        let mut t = vec![0x00, 0x90, 10, 80, 0x00, 0x90, 60, 80, 0x00, 0x90, 120, 80];
        t.extend_from_slice(&EOT);
        let p = parse_smf_detailed(&smf(0, 480, &[t])).unwrap();
        assert_eq!(p.notes.len(), 1);
        assert_eq!(p.dropped, 2);
    }

    #[test]
    fn malformed_files() {
        assert!(parse_smf(b"RIFF\0\0\0\x06").unwrap_err().to_string().contains("MThd"));
        let truncated = smf(0, 480, &[vec![0x81, 0x80]]);
        let err = parse_smf(&truncated).unwrap_err().to_string();
        assert!(err.contains("truncated variable-length quantity"), "{err}");
        let smpte = smf(0, 0xe728, &[EOT.to_vec()]);
        assert!(parse_smf(&smpte).unwrap_err().to_string().contains("SMPTE"));
    }

    #[test]
    fn empty_list_writes_end_of_track_only() {
        let bytes = write_smf(&[]).unwrap();
        assert_eq!(&bytes[..4], b"MThd");
        assert!(bytes.ends_with(&[0x00, 0xff, 0x2f, 0x00]));
        // header 14 + chunk header 8 + tempo 7 + end-of-track 4
        assert_eq!(bytes.len(), 33);
        assert!(parse_smf(&bytes).unwrap().is_empty());
    }

    #[test]
    fn one_note_round_trip() {
        let n = NoteEvent::new(1.0, 60).unwrap();
        let back = parse_smf(&write_smf(&[n]).unwrap()).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].onset - 1.0).abs() <= 1.05e-3);
        assert_eq!(back[0].pitch, 60);
    }

    #[test]
    fn simultaneous_notes_order_by_pitch() {
        let notes = [NoteEvent::new(0.5, 67).unwrap(), NoteEvent::new(0.5, 60).unwrap()];
        let back = parse_smf(&write_smf(&notes).unwrap()).unwrap();
        assert_eq!(back.iter().map(|n| n.pitch).collect::<Vec<_>>(), vec![60, 67]);
        assert_eq!(write_smf(&notes).unwrap(), write_smf(&[notes[1], notes[0]]).unwrap());
    }

    #[test]
    fn writer_rejects_bad_pitch() {
        let bad = NoteEvent { onset: 0.0, pitch: 109 };
        assert!(matches!(write_smf(&[bad]), Err(Error::PitchOutOfRange(109))));
    }

    #[test]
    fn vlq_encoding() {
        for (v, want) in [
            (0u32, vec![0x00]),
            (0x7f, vec![0x7f]),
            (0x80, vec![0x81, 0x00]),
            (0x3fff, vec![0xff, 0x7f]),
            (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f]),
        ] {
            let mut out = Vec::new();
            write_vlq(&mut out, v);
            assert_eq!(out, want);
            assert_eq!(Reader { bytes: &out, pos: 0 }.vlq().unwrap(), v);
        }
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(raw in prop::collection::vec((0.0f64..600.0, 21u8..=108), 0..40)) {
            let notes: Vec<NoteEvent> = raw.iter().map(|&(t, p)| NoteEvent::new(t, p).unwrap()).collect();
            let back = parse_smf(&write_smf(&notes).unwrap()).unwrap();
            let mut want = notes.clone();
            sort_notes(&mut want);
            prop_assert_eq!(back.len(), want.len());
            // sorting may swap near-equal onsets after quantization; compare multisets per pitch
            for p in 21u8..=108 {
                let a: Vec<f64> = want.iter().filter(|n| n.pitch == p).map(|n| n.onset).collect();
                let b: Vec<f64> = back.iter().filter(|n| n.pitch == p).map(|n| n.onset).collect();
                prop_assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1.05e-3);
                }
            }
        }
    }
}
